use dcil::constraints::KinematicBounds;
use dcil::dynamics::{UnicycleControl, UnicycleState};
use dcil::expert::{dwa_plan, DwaConfig, DwaPlanner, NavField};
use dcil::geometry::Circle;
use dcil::sim::{count_violations, rollout_closed_loop, spawn_episode, Outcome, RolloutConfig, World, WorldConfig};
use proptest::prelude::*;

fn world(obstacles: Vec<Circle>, goal: [f64; 2]) -> World {
    World {
        seed: 0,
        size: 30.0,
        obstacles,
        start: UnicycleState::new(5.0, 15.0, 0.0),
        goal,
        goal_radius: 0.5,
        robot_radius: 1.0,
    }
}

#[test]
fn straight_to_the_goal_at_full_speed() {
    let w = world(Vec::new(), [25.0, 15.0]);
    let u = dwa_plan(&DwaConfig::default(), &w, &w.start, &UnicycleControl::new(1.0, 0.0));
    assert_eq!(u.v, 1.0);
    assert!(u.omega.abs() < 1e-12);
}

#[test]
fn window_examples() {
    let cfg = DwaConfig::default();
    let (v, w) = cfg.window(&UnicycleControl::new(0.5, 0.0));
    assert!((v.lo - 0.44).abs() < 1e-12 && (v.hi - 0.56).abs() < 1e-12);
    assert!((w.lo + 0.21).abs() < 1e-12 && (w.hi - 0.21).abs() < 1e-12);
    let (v, _) = cfg.window(&UnicycleControl::new(0.0, 0.0));
    assert_eq!((v.lo, v.hi), (-0.06, 0.06));
    // Outside the box: the window collapses onto the clamped value.
    let (v, _) = cfg.window(&UnicycleControl::new(2.0, 0.0));
    assert_eq!((v.lo, v.hi), (1.0, 1.0));
}

#[test]
fn braking_moves_towards_rest() {
    let cfg = DwaConfig::default();
    assert_eq!(cfg.brake(&UnicycleControl::new(0.5, -0.1)), UnicycleControl::new(0.44, 0.0));
    let b = cfg.brake(&UnicycleControl::new(0.03, 0.4));
    assert_eq!(b.v, 0.0);
    assert!((b.omega - 0.19).abs() < 1e-12);
}

#[test]
fn colliding_candidates_are_rejected() {
    let cfg = DwaConfig::default();
    let w = world(vec![Circle::new(6.5, 15.0, 0.4)], [25.0, 15.0]);
    let nav = NavField::new(&w, cfg.nav_cell);
    assert!(cfg.score(&w, &nav, &w.start, &UnicycleControl::new(1.0, 0.0)).is_none());
    let free = world(Vec::new(), [25.0, 15.0]);
    let nav = NavField::new(&free, cfg.nav_cell);
    let s = cfg.score(&free, &nav, &free.start, &UnicycleControl::new(1.0, 0.0)).unwrap();
    assert!((s - 1.7).abs() < 1e-9);
}

#[test]
fn obstacle_ahead_is_avoided() {
    let w = world(vec![Circle::new(6.5 + 1.0, 15.0, 0.5)], [20.0, 15.0]);
    let r = rollout_closed_loop(&mut DwaPlanner::default(), &w, &RolloutConfig::default());
    assert_eq!(r.outcome, Outcome::Goal);
    assert!(r.states.iter().all(|s| w.clearance(s.x, s.y) > 0.0));
}

#[test]
fn navigation_field_examples() {
    let w = world(Vec::new(), [25.0, 15.0]);
    let nav = NavField::new(&w, 0.25);
    assert!(nav.value(25.0, 15.0) < 0.3);
    assert!((nav.value(15.0, 15.0) - 10.0).abs() < 0.5);
    let t = nav.lookahead(15.0, 15.0, 2.0);
    assert!((t[0] - 17.0).abs() < 0.5 && (t[1] - 15.0).abs() < 0.5);

    let wall = world(vec![Circle::new(15.0, 15.0, 3.0)], [25.0, 15.0]);
    let nav = NavField::new(&wall, 0.25);
    assert!(nav.value(8.0, 15.0) > 17.0 + 0.5);
}

#[test]
fn expert_solves_spawned_worlds() {
    let cfg = WorldConfig::default();
    let mut solved = 0;
    for seed in 0..10 {
        let w = spawn_episode(seed, &cfg).unwrap();
        let r = rollout_closed_loop(&mut DwaPlanner::default(), &w, &RolloutConfig::default());
        assert_ne!(r.outcome, Outcome::Collision, "seed {seed}");
        assert_eq!(r.kcv, 0, "seed {seed}");
        solved += usize::from(r.outcome == Outcome::Goal);
    }
    assert!(solved >= 8, "{solved}/10");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = DwaConfig {
        grid: [1, 5],
        ..Default::default()
    };
    assert!(DwaPlanner::new(bad).is_err());
    let bad = DwaConfig {
        w_clearance: 0.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decisions_are_admissible(seed in 0u64..5000, v in 0.0..1.0f64, w in -0.5..0.5f64) {
        let cfg = DwaConfig::default();
        let world = spawn_episode(seed, &WorldConfig::default()).unwrap();
        let current = UnicycleControl::new(v, w);
        let u = dwa_plan(&cfg, &world, &world.start, &current);
        let b: KinematicBounds = cfg.bounds;
        let before = count_violations(&[current], &b, cfg.dt);
        prop_assert_eq!(count_violations(&[current, u], &b, cfg.dt), before);
        prop_assert_eq!(u, dwa_plan(&cfg, &world, &world.start, &current));
    }
}
