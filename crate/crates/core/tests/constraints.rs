use std::collections::HashSet;

use dcil::constraints::{
    eval_inequalities, pad_obstacles, penalty, penalty_graph, select_obstacles, ConstraintSet, InequalityVector,
    KinematicBounds, RowKind, StopLine, FAR_AWAY, OBSTACLE_SLOTS,
};
use dcil::dynamics::{unroll, Bicycle, BicycleControl, BicycleState, StateNodes, UnicycleControl, UnicycleState};
use dcil::geometry::{corridor_from_polyline, Circle, Corridor, FootprintCircle, Polyline, Side};
use dcil_autodiff::{Bindings, Graph, Tensor};
use proptest::prelude::*;

fn rows_of(g: &InequalityVector, kind: RowKind) -> Vec<f64> {
    g.values.iter().zip(&g.labels).filter(|(_, l)| l.kind == kind).map(|(v, _)| *v).collect()
}

fn straight(n: usize, spacing: f64) -> Vec<UnicycleState> {
    (0..=n).map(|k| UnicycleState::new(k as f64 * spacing, 0.0, 0.0)).collect()
}

#[test]
fn default_boxes() {
    let b = KinematicBounds::default();
    assert_eq!((b.v.lo, b.v.hi), (-0.5, 1.0));
    assert_eq!((b.omega.lo, b.omega.hi), (-0.7, 0.7));
    assert_eq!((b.accel.lo, b.accel.hi), (-0.2, 0.2));
    assert_eq!((b.omega_dot.lo, b.omega_dot.hi), (-0.7, 0.7));
}

#[test]
fn obstacle_clearance_row() {
    let set = ConstraintSet::mobile_robot(UnicycleControl::default(), vec![Circle::new(5.0, 0.0, 0.5)]);
    let states = [UnicycleState::default(), UnicycleState::default()];
    let g = eval_inequalities(&states, None, &set, 0.3).unwrap();
    let rows = rows_of(&g, RowKind::Obstacle);
    assert_eq!(rows.len(), OBSTACLE_SLOTS);
    assert!((rows[0] - (1.0 + 0.5 + 0.1 - 5.0)).abs() < 1e-12);
    assert!(rows[1] < -998.0 && rows[2] < -998.0);
}

#[test]
fn velocity_rows() {
    let set = ConstraintSet::mobile_robot(UnicycleControl::new(1.1, 0.0), Vec::new());
    let u = [UnicycleControl::new(1.2, 0.0), UnicycleControl::new(1.0, 0.0)];
    let states = unroll(&UnicycleState::default(), &u, 0.3).unwrap();
    let g = eval_inequalities(&states, Some(&u), &set, 0.3).unwrap();
    let vmax = rows_of(&g, RowKind::VelocityMax);
    assert!((vmax[0] - 0.2).abs() < 1e-12);
    assert_eq!(vmax[1], 0.0);
    let amax = rows_of(&g, RowKind::AccelMax);
    let amin = rows_of(&g, RowKind::AccelMin);
    // First difference is taken against the measured control 1.1.
    assert!((amax[0] - (0.1 / 0.3 - 0.2)).abs() < 1e-12);
    assert!((amin[1] - (-0.2 - (-0.2 / 0.3))).abs() < 1e-12);
}

#[test]
fn row_layout_and_labels_are_a_bijection() {
    let mut set = ConstraintSet::mobile_robot(UnicycleControl::default(), vec![Circle::new(3.0, 1.0, 0.4)]);
    set.corridor = Some(corridor_from_polyline(&[[0.0, 0.0], [10.0, 0.0]], 2.0).unwrap());
    set.corridor.as_mut().unwrap().footprint = Corridor::car_footprint();
    set.stop_line = Some(StopLine::new(true, &UnicycleState::default(), 5.0));
    let h = 6;
    let u = vec![UnicycleControl::new(0.5, 0.1); h];
    let states = unroll(&UnicycleState::default(), &u, 0.3).unwrap();
    let g = eval_inequalities(&states, Some(&u), &set, 0.3).unwrap();
    let expected = 8 * h + OBSTACLE_SLOTS * h + 2 * 4 * h + h;
    assert_eq!(g.values.len(), expected);
    assert_eq!(g.labels.len(), expected);
    assert_eq!(set.alpha(h, true).len(), expected);
    let unique: HashSet<_> = g.labels.iter().collect();
    assert_eq!(unique.len(), expected);
    assert_eq!(g.labels[0].kind, RowKind::VelocityMax);
    assert_eq!(g.labels.last().unwrap().kind, RowKind::StopLine);
    assert!(g.labels.iter().filter(|l| !l.kind.is_kinematic()).all(|l| (1..=h).contains(&l.step)));
}

#[test]
fn selection_uses_the_front_half_plane() {
    let pose = UnicycleState::default();
    let behind = select_obstacles(&[Circle::new(-3.0, 0.0, 1.0)], &pose, 3);
    assert!(behind.iter().all(|c| c.cx == FAR_AWAY));

    let front: Vec<Circle> = [6.0, 2.0, 5.0, 3.0, 4.0].iter().map(|&d| Circle::new(d, 0.0, 0.2)).collect();
    let picked = select_obstacles(&front, &pose, 3);
    assert_eq!(picked.iter().map(|c| c.cx).collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);

    let two = select_obstacles(&front[..2], &pose, 3);
    assert_eq!(two[2].cx, FAR_AWAY);
    let set = ConstraintSet::mobile_robot(UnicycleControl::default(), two);
    let g = eval_inequalities(&[pose, pose], None, &set, 0.3).unwrap();
    assert!((g.values[2] - (1.1 - FAR_AWAY)).abs() < 1e-9);
}

#[test]
fn selection_is_expressed_in_the_robot_frame() {
    let pose = UnicycleState::new(2.0, 1.0, std::f64::consts::FRAC_PI_2);
    let picked = select_obstacles(&[Circle::new(2.0, 4.0, 0.5)], &pose, 3);
    assert!((picked[0].cx - 3.0).abs() < 1e-12 && picked[0].cy.abs() < 1e-12);
    assert_eq!(pad_obstacles(Vec::new()).len(), OBSTACLE_SLOTS);
}

#[test]
fn penalty_examples() {
    assert_eq!(penalty(&[-1.0, -0.5], &[1.0, 1.0], true).unwrap(), 0.0);
    assert!((penalty(&[0.1, -5.0], &[1.0, 1.0], true).unwrap() - 0.01).abs() < 1e-15);
    assert!((penalty(&[0.3, 0.4], &[1.0, 1.0], false).unwrap() - 0.5).abs() < 1e-15);
    assert!(penalty(&[0.3], &[0.0], false).is_err());
    assert!(penalty(&[0.3], &[1.0, 1.0], false).is_err());
}

#[test]
fn straight_corridor() {
    let c = corridor_from_polyline(&[[0.0, 0.0], [10.0, 0.0]], 2.0).unwrap();
    assert!(c.left.points.iter().all(|p| (p[1] - 2.0).abs() < 1e-12));
    assert!(c.right.points.iter().all(|p| (p[1] + 2.0).abs() < 1e-12));
    let dl = c.left.signed_distance(4.0, 0.0, Side::Right);
    let dr = c.right.signed_distance(4.0, 0.0, Side::Left);
    assert!((dl - 2.0).abs() < 1e-12 && (dr - 2.0).abs() < 1e-12);

    let mut set = ConstraintSet::mobile_robot(UnicycleControl::default(), Vec::new());
    set.corridor = Some(Corridor {
        footprint: vec![FootprintCircle { offset: 0.0, radius: 1.0 }],
        ..c
    });
    let on_center = [UnicycleState::default(), UnicycleState::new(4.0, 0.0, 0.0)];
    let g = eval_inequalities(&on_center, None, &set, 0.3).unwrap();
    assert!((rows_of(&g, RowKind::CorridorLeft)[0] + 1.0).abs() < 1e-12);
    assert!((rows_of(&g, RowKind::CorridorRight)[0] + 1.0).abs() < 1e-12);

    let on_left = [UnicycleState::default(), UnicycleState::new(4.0, 2.0, 0.0)];
    let g = eval_inequalities(&on_left, None, &set, 0.3).unwrap();
    assert!((rows_of(&g, RowKind::CorridorLeft)[0] - 1.0).abs() < 1e-12);
}

#[test]
fn corridor_rejects_bad_input() {
    assert!(corridor_from_polyline(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]], 2.0).is_err());
    assert!(corridor_from_polyline(&[[0.0, 0.0]], 2.0).is_err());
    assert!(corridor_from_polyline(&[[0.0, 0.0], [1.0, 0.0]], 0.0).is_err());
}

#[test]
fn bent_corridor_keeps_its_width() {
    let c = corridor_from_polyline(&[[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]], 2.0).unwrap();
    assert!((c.left.points[1][0] - 8.0).abs() < 1e-12 && (c.left.points[1][1] - 2.0).abs() < 1e-12);
    for p in [[5.0, 0.0], [10.0, 5.0], [2.0, 1.5]] {
        let d = c.left.signed_distance(p[0], p[1], Side::Right) + c.right.signed_distance(p[0], p[1], Side::Left);
        assert!((d - 4.0).abs() < 1e-9, "{p:?}: {d}");
    }
    let seg = Polyline::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
    assert_eq!(seg.project(2.0, -1.0).segment, 0);
}

#[test]
fn stop_line_rows() {
    let pose = UnicycleState::default();
    let mut set = ConstraintSet::mobile_robot(UnicycleControl::default(), Vec::new());
    set.stop_line = Some(StopLine::new(true, &pose, 5.0));
    let stops_at_four = [0.0, 1.5, 3.0, 4.0, 4.0].map(|x| UnicycleState::new(x, 0.0, 0.0));
    let g = eval_inequalities(&stops_at_four, None, &set, 0.3).unwrap();
    assert!(rows_of(&g, RowKind::StopLine).iter().all(|&r| r <= -1.0));

    let past = [pose, UnicycleState::new(5.5, 0.0, 0.0)];
    let g = eval_inequalities(&past, None, &set, 0.3).unwrap();
    assert!((rows_of(&g, RowKind::StopLine)[0] - 0.5).abs() < 1e-12);

    set.stop_line = Some(StopLine::new(false, &pose, 5.0));
    let travel = straight(10, 1.0);
    let g = eval_inequalities(&travel, None, &set, 0.3).unwrap();
    assert!(rows_of(&g, RowKind::StopLine).iter().all(|&r| r <= -(FAR_AWAY - 10.0)));
}

#[test]
fn stop_line_follows_the_heading() {
    let pose = UnicycleState::new(1.0, 1.0, std::f64::consts::FRAC_PI_2);
    let line = StopLine::new(true, &pose, 3.0);
    assert!((line.row(1.0, 4.5) - 0.5).abs() < 1e-12);
    assert!((line.row(7.0, 4.0)).abs() < 1e-12);
}

#[test]
fn centered_bicycle_stays_inside_a_four_metre_corridor() {
    let c = corridor_from_polyline(&[[-5.0, 0.0], [60.0, 0.0]], 2.0).unwrap();
    let mut set = ConstraintSet::mobile_robot(UnicycleControl::default(), Vec::new());
    set.corridor = Some(Corridor {
        footprint: Corridor::car_footprint(),
        ..c
    });
    let car = Bicycle::default();
    let x0 = BicycleState { v: 8.0, ..Default::default() };
    let states: Vec<UnicycleState> = car
        .unroll(&x0, &[BicycleControl::default(); 20], 0.2)
        .unwrap()
        .iter()
        .map(UnicycleState::from)
        .collect();
    let g = eval_inequalities(&states, None, &set, 0.2).unwrap();
    let corridor: Vec<f64> = g
        .values
        .iter()
        .zip(&g.labels)
        .filter(|(_, l)| matches!(l.kind, RowKind::CorridorLeft | RowKind::CorridorRight))
        .map(|(v, _)| *v)
        .collect();
    assert_eq!(corridor.len(), 2 * 4 * 20);
    assert!(corridor.iter().all(|&r| r <= 0.0));
}

#[test]
fn dummy_slots_do_not_change_the_gradient() {
    let near = vec![Circle::new(1.5, 0.2, 0.5)];
    let xs = vec![0.5, 1.0, 1.4, 2.0];
    let ys = vec![0.0, 0.1, 0.1, 0.3];
    let grads = |obstacles: Vec<Circle>| {
        let mut set = ConstraintSet::mobile_robot(UnicycleControl::default(), Vec::new());
        set.obstacles = obstacles;
        let mut g = Graph::new();
        let x = g.placeholder("x", &[4]);
        let y = g.placeholder("y", &[4]);
        let phi = g.constant(Tensor::zeros(&[4]));
        let rows = set.rows_graph(&mut g, None, &StateNodes { x, y, phi }, 0.3);
        let p = penalty_graph(&mut g, &rows, true);
        let mut b = Bindings::new();
        b.bind(x, Tensor::vector(xs.clone()));
        b.bind(y, Tensor::vector(ys.clone()));
        g.forward(&Default::default(), &b).unwrap();
        let gr = g.backward(p).unwrap();
        (g.value(p).unwrap().item(), gr.wrt(x).data().to_vec(), gr.wrt(y).data().to_vec())
    };
    assert_eq!(grads(near.clone()), grads(pad_obstacles(near)));
}

fn rows() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 1..30)
}

proptest! {
    #[test]
    fn zero_penalty_iff_satisfied(g in rows(), squared in any::<bool>()) {
        let alpha = vec![1.5; g.len()];
        let p = penalty(&g, &alpha, squared).unwrap();
        prop_assert_eq!(p == 0.0, g.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn penalty_is_monotone_in_each_row(g in rows(), i in 0usize..30, bump in 0.0..1.0f64, squared in any::<bool>()) {
        let i = i % g.len();
        let alpha = vec![1.0; g.len()];
        let mut h = g.clone();
        h[i] += bump;
        prop_assert!(penalty(&h, &alpha, squared).unwrap() >= penalty(&g, &alpha, squared).unwrap());
    }

    #[test]
    fn dummy_rows_never_bind(x in -50.0..50.0f64, y in -50.0..50.0f64) {
        let set = ConstraintSet::mobile_robot(UnicycleControl::default(), Vec::new());
        let g = eval_inequalities(&[UnicycleState::default(), UnicycleState::new(x, y, 0.0)], None, &set, 0.3).unwrap();
        prop_assert!(g.values.iter().all(|&v| v < -800.0));
    }
}
