use std::f64::consts::{FRAC_PI_2, PI};

use dcil::dynamics::{UnicycleControl, UnicycleState};
use dcil::geometry::Circle;
use dcil::policy::NetConfig;
use dcil::sim::{
    compute_metrics, count_violations, measurements, render_occupancy, rollout_closed_loop, spawn_episode,
    EpisodeResult, Measurements, Observation, Outcome, Planner, RolloutConfig, World, WorldConfig,
};
use proptest::prelude::*;

fn open_world(obstacles: Vec<Circle>) -> World {
    World {
        seed: 0,
        size: 30.0,
        obstacles,
        start: UnicycleState::new(5.0, 5.0, 0.0),
        goal: [12.0, 5.0],
        goal_radius: 0.5,
        robot_radius: 1.0,
    }
}

fn episode(outcome: Outcome, steps: usize, kcv: usize) -> EpisodeResult {
    EpisodeResult {
        seed: 0,
        outcome,
        time: steps as f64 * 0.3,
        states: vec![UnicycleState::default(); steps + 1],
        controls: vec![UnicycleControl::default(); steps],
        kcv,
    }
}

struct Constant(UnicycleControl);

impl Planner for Constant {
    fn plan(&mut self, _: &Observation<'_>) -> dcil::Result<Vec<UnicycleState>> {
        let first = dcil::dynamics::unicycle_step(&UnicycleState::default(), &self.0, 0.3)?;
        Ok(vec![first])
    }
}

struct Broken;

impl Planner for Broken {
    fn plan(&mut self, _: &Observation<'_>) -> dcil::Result<Vec<UnicycleState>> {
        Ok(vec![UnicycleState { x: f64::NAN, y: 0.0, phi: 0.0 }])
    }
}

#[test]
fn spawning_is_deterministic() {
    let cfg = WorldConfig::default();
    assert_eq!(spawn_episode(9, &cfg).unwrap(), spawn_episode(9, &cfg).unwrap());
    assert_ne!(spawn_episode(9, &cfg).unwrap(), spawn_episode(10, &cfg).unwrap());
}

#[test]
fn obstacle_free_worlds_are_allowed() {
    let cfg = WorldConfig {
        obstacles: [0, 0],
        ..WorldConfig::default()
    };
    let w = spawn_episode(3, &cfg).unwrap();
    assert!(w.obstacles.is_empty());
    assert_eq!(w.clearance(w.start.x, w.start.y), f64::INFINITY);
}

#[test]
fn impossible_worlds_are_rejected() {
    let crowded = WorldConfig {
        size: 8.0,
        obstacles: [30, 30],
        obstacle_radius: dcil::constraints::Interval::new(2.0, 2.0),
        min_start_goal: 5.0,
        ..WorldConfig::default()
    };
    assert!(matches!(spawn_episode(1, &crowded), Err(dcil::Error::Spawn { seed: 1, .. })));
    let bad = WorldConfig {
        obstacles: [5, 2],
        ..WorldConfig::default()
    };
    assert!(spawn_episode(1, &bad).is_err());
}

#[test]
fn spawned_worlds_respect_their_margins() {
    let cfg = WorldConfig::default();
    for seed in 0..1000 {
        let w = spawn_episode(seed, &cfg).unwrap();
        assert!((4..=12).contains(&w.obstacles.len()));
        assert!(w.clearance(w.start.x, w.start.y) >= cfg.margin);
        assert!(w.clearance(w.goal[0], w.goal[1]) >= cfg.margin);
        assert!(w.goal_distance(w.start.x, w.start.y) >= cfg.min_start_goal);
        for o in &w.obstacles {
            assert!((0.1..=3.0).contains(&o.r));
            assert!(o.cx - o.r >= 0.0 && o.cx + o.r <= cfg.size && o.cy - o.r >= 0.0 && o.cy + o.r <= cfg.size);
        }
    }
}

#[test]
fn empty_world_renders_blank() {
    let img = render_occupancy(&[], &UnicycleState::default(), &NetConfig::default());
    assert_eq!(img.len(), 64 * 64);
    assert!(img.iter().all(|&p| p == 0.0));
}

#[test]
fn disk_two_metres_ahead() {
    let cfg = NetConfig::default();
    let img = render_occupancy(&[Circle::new(2.0, 0.0, 0.5)], &UnicycleState::default(), &cfg);
    let (ar, ac) = (cfg.anchor_row as i64, cfg.anchor_col() as i64);
    let mut set = Vec::new();
    for r in 0..64i64 {
        for c in 0..64i64 {
            if img[(r * 64 + c) as usize] == 1.0 {
                set.push((r - ar, c - ac));
            }
        }
    }
    // Radius 2.5 px around (-10, 0): every pixel with dr² + dc² < 6.25.
    let expected: Vec<(i64, i64)> = (-13..=-7)
        .flat_map(|r| (-3..=3).map(move |c| (r, c)))
        .filter(|&(r, c)| ((r + 10) * (r + 10) + c * c) < 7)
        .collect();
    assert_eq!(set, expected);
    assert_eq!(set.len(), 21);
}

#[test]
fn left_is_left_in_the_image() {
    let cfg = NetConfig::default();
    let img = render_occupancy(&[Circle::new(0.0, 3.0, 0.5)], &UnicycleState::default(), &cfg);
    let at = |r: usize, c: usize| img[r * 64 + c];
    assert_eq!(at(cfg.anchor_row, cfg.anchor_col() - 15), 1.0);
    assert_eq!(at(cfg.anchor_row, cfg.anchor_col() + 15), 0.0);
}

#[test]
fn rendering_is_frame_invariant() {
    let obstacles = vec![Circle::new(3.0, 1.0, 1.0), Circle::new(-2.0, 4.0, 2.0), Circle::new(6.0, -3.0, 0.4)];
    let pose = UnicycleState::new(0.5, -0.5, 0.3);
    let base = render_occupancy(&obstacles, &pose, &NetConfig::default());
    let (tx, ty, rot) = (10.0, -4.0, 1.1f64);
    let (s, c) = rot.sin_cos();
    let move_pt = |x: f64, y: f64| (c * x - s * y + tx, s * x + c * y + ty);
    let moved: Vec<Circle> = obstacles
        .iter()
        .map(|o| {
            let (x, y) = move_pt(o.cx, o.cy);
            Circle::new(x, y, o.r)
        })
        .collect();
    let (px, py) = move_pt(pose.x, pose.y);
    let other = render_occupancy(&moved, &UnicycleState::new(px, py, pose.phi + rot), &NetConfig::default());
    let differ = base.iter().zip(&other).filter(|(a, b)| a != b).count();
    // Pixel centres exactly on a circle boundary may flip by rounding.
    assert!(differ <= 2, "{differ} pixels differ");
    assert!(base.iter().sum::<f64>() > 100.0);
}

#[test]
fn measurement_examples() {
    let w = open_world(Vec::new());
    let at_goal = measurements(&w, &UnicycleState::new(12.0, 5.0, 0.0), &UnicycleControl::default());
    assert_eq!(at_goal.goal_distance, 0.0);

    let left = Measurements::new([0.0, 3.0], &UnicycleState::default(), &UnicycleControl::default());
    assert!((left.goal_distance - 3.0).abs() < 1e-12);
    assert!((left.goal_bearing - FRAC_PI_2).abs() < 1e-12);
    assert_eq!((left.v, left.omega), (0.0, 0.0));

    let behind = Measurements::new([-2.0, 0.0], &UnicycleState::default(), &UnicycleControl::new(0.6, -0.2));
    assert!((behind.goal_bearing - PI).abs() < 1e-12);
    let n = behind.normalized(&RolloutConfig::default().bounds);
    assert!((n[0] - 0.4).abs() < 1e-12 && (n[1] + 0.2 / 1.4).abs() < 1e-12);
    assert!((n[2] - 0.2).abs() < 1e-12 && (n[3] + 1.0).abs() < 1e-12);
}

#[test]
fn metric_examples() {
    let goals = vec![episode(Outcome::Goal, 10, 0); 4];
    let m = compute_metrics(&goals, Some(&goals)).unwrap();
    assert_eq!((m.grr, m.cr, m.time), (100.0, 0.0, Some(100.0)));

    let mut runs = vec![episode(Outcome::Goal, 100, 0); 9];
    runs.push(episode(Outcome::Collision, 100, 1));
    let m = compute_metrics(&runs, None).unwrap();
    assert_eq!((m.kcv_count, m.kcv_steps), (1, 1000));
    assert!((m.kcv_percent - 0.1).abs() < 1e-12);
    assert_eq!((m.grr, m.cr, m.time), (90.0, 10.0, None));

    let agent = vec![episode(Outcome::Goal, 30, 0), episode(Outcome::Timeout, 200, 0)];
    let expert = vec![episode(Outcome::Goal, 20, 0), episode(Outcome::Goal, 20, 0)];
    assert_eq!(compute_metrics(&agent, Some(&expert)).unwrap().time, Some(150.0));

    assert!(compute_metrics(&[], None).is_err());
    assert!(compute_metrics(&agent, Some(&expert[..1])).is_err());
}

#[test]
fn violation_counting() {
    let b = RolloutConfig::default().bounds;
    let ramp: Vec<_> = (1..=5).map(|k| UnicycleControl::new(0.06 * k as f64, 0.0)).collect();
    assert_eq!(count_violations(&ramp, &b, 0.3), 0);
    let jump = [UnicycleControl::new(0.06, 0.0), UnicycleControl::new(0.2, 0.0)];
    assert_eq!(count_violations(&jump, &b, 0.3), 1);
    let tolerated = [UnicycleControl::new(0.06 + 2e-5, 0.0)];
    assert_eq!(count_violations(&tolerated, &b, 0.3), 0);
    let too_fast = [UnicycleControl::new(0.06, 0.8)];
    assert_eq!(count_violations(&too_fast, &b, 0.3), 1);
}

#[test]
fn standing_still_times_out() {
    let w = open_world(Vec::new());
    let r = rollout_closed_loop(&mut Constant(UnicycleControl::default()), &w, &RolloutConfig::default());
    assert_eq!(r.outcome, Outcome::Timeout);
    assert_eq!(r.controls.len(), 200);
    assert_eq!(r.kcv, 0);
}

#[test]
fn driving_into_an_obstacle_stops_the_episode() {
    let w = open_world(vec![Circle::new(9.0, 5.0, 1.0)]);
    let r = rollout_closed_loop(&mut Constant(UnicycleControl::new(1.0, 0.0)), &w, &RolloutConfig::default());
    assert_eq!(r.outcome, Outcome::Collision);
    assert!(w.clearance(r.states.last().unwrap().x, 5.0) < 0.0);
    assert!(w.clearance(r.states[r.states.len() - 2].x, 5.0) >= 0.0);
    // The first step jumps from rest to 1 m/s.
    assert!(r.kcv >= 1);
}

#[test]
fn reaching_the_goal() {
    let w = open_world(Vec::new());
    let r = rollout_closed_loop(&mut Constant(UnicycleControl::new(0.9, 0.0)), &w, &RolloutConfig::default());
    assert_eq!(r.outcome, Outcome::Goal);
    assert!(w.at_goal(r.states.last().unwrap().x, 5.0));
    assert_eq!(r.steps(), r.controls.len());
}

#[test]
fn non_finite_plans_fail_the_episode() {
    let w = open_world(Vec::new());
    let r = rollout_closed_loop(&mut Broken, &w, &RolloutConfig::default());
    assert_eq!(r.outcome, Outcome::Failed);
    assert!(r.controls.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_are_deterministic(seed in 0u64..10_000, v in 0.0..1.0f64, w in -0.5..0.5f64) {
        let world = spawn_episode(seed, &WorldConfig::default()).unwrap();
        let cfg = RolloutConfig { timeout: 6.0, ..Default::default() };
        let a = rollout_closed_loop(&mut Constant(UnicycleControl::new(v, w)), &world, &cfg);
        let b = rollout_closed_loop(&mut Constant(UnicycleControl::new(v, w)), &world, &cfg);
        prop_assert_eq!(a, b);
    }
}
