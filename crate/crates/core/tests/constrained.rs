use dcil::constrained::{
    complete, correct, correct_traced, distance_loss, soft_loss, trajectory_penalty, CorrectionConfig,
    CorrectionMode, SoftLossWeights, Trajectory,
};
use dcil::constraints::ConstraintSet;
use dcil::dynamics::{UnicycleControl, UnicycleState};
use dcil::geometry::Circle;
use proptest::prelude::*;

fn cfg(gamma: f64, n_grad: usize, mode: CorrectionMode) -> CorrectionConfig {
    CorrectionConfig { gamma, n_grad, mode }
}

/// A set whose only possible violation is the velocity box.
fn box_only(prev_v: f64) -> ConstraintSet {
    let mut set = ConstraintSet::mobile_robot(UnicycleControl::new(prev_v, 0.0), Vec::new());
    set.bounds.accel.lo = -100.0;
    set.bounds.accel.hi = 100.0;
    set
}

#[test]
fn zero_controls_stay_at_the_origin() {
    let t = complete(&[UnicycleControl::default(); 10], &UnicycleState::default(), 0.3).unwrap();
    assert_eq!(t.states.len(), 11);
    assert!(t.states.iter().all(|s| *s == UnicycleState::default()));
}

#[test]
fn unit_speed_completion() {
    let t = complete(&[UnicycleControl::new(1.0, 0.0); 10], &UnicycleState::default(), 0.3).unwrap();
    let last = t.states.last().unwrap();
    assert!((last.x - 3.0).abs() < 1e-12 && last.y == 0.0 && last.phi == 0.0);
    assert!(complete(&[UnicycleControl::new(f64::NAN, 0.0)], &UnicycleState::default(), 0.3).is_err());
}

#[test]
fn single_box_row_hand_gradient() {
    let mut u = vec![UnicycleControl::new(0.5, 0.0); 10];
    u[0].v = 1.1;
    let set = box_only(1.1);
    let t = complete(&u, &UnicycleState::default(), 0.3).unwrap();
    let out = correct(&t, &set, &cfg(1e-3, 1, CorrectionMode::Linearized)).unwrap();
    assert!((out.controls[0].v - (1.1 - 1e-3 * 2.0 * 0.1)).abs() < 1e-12);
    assert!((out.controls[0].v - 1.0998).abs() < 1e-12);
    assert_eq!(&out.controls[1..], &u[1..]);
}

#[test]
fn zero_iterations_return_the_input() {
    let u = vec![UnicycleControl::new(1.2, 0.9); 10];
    let set = ConstraintSet::mobile_robot(UnicycleControl::default(), vec![Circle::new(1.0, 0.0, 1.0)]);
    let t = complete(&u, &UnicycleState::default(), 0.3).unwrap();
    assert_eq!(correct(&t, &set, &cfg(1e-3, 0, CorrectionMode::Linearized)).unwrap(), t);
}

#[test]
fn infeasible_set_still_descends() {
    // The robot starts inside two overlapping obstacles.
    let set = ConstraintSet::mobile_robot(
        UnicycleControl::new(0.5, 0.0),
        vec![Circle::new(0.8, 0.3, 1.0), Circle::new(0.8, -0.3, 1.0)],
    );
    let t = complete(&[UnicycleControl::new(0.5, 0.0); 10], &UnicycleState::default(), 0.3).unwrap();
    let report = correct_traced(&t, &set, &cfg(1e-3, 5, CorrectionMode::Recompleted)).unwrap();
    report.trajectory.validate().unwrap();
    assert!(report.penalties.windows(2).all(|w| w[1] <= w[0]));
    assert!(trajectory_penalty(&report.trajectory, &set).unwrap() < trajectory_penalty(&t, &set).unwrap());
}

#[test]
fn modes_differ_only_in_the_states() {
    let u: Vec<_> = (0..10).map(|k| UnicycleControl::new(0.9 + 0.03 * k as f64, 0.3)).collect();
    let set = ConstraintSet::mobile_robot(UnicycleControl::new(0.9, 0.3), vec![Circle::new(2.5, 0.8, 0.6)]);
    let t = complete(&u, &UnicycleState::default(), 0.3).unwrap();
    let lin = correct(&t, &set, &cfg(1e-3, 5, CorrectionMode::Linearized)).unwrap();
    let rec = correct(&t, &set, &cfg(1e-3, 5, CorrectionMode::Recompleted)).unwrap();
    assert_eq!(lin.controls, rec.controls);
    assert_ne!(lin.controls, t.controls);
    assert!(rec.equality_residual().unwrap().iter().all(|h| h.abs() <= 1e-12));
    let h = lin.equality_residual().unwrap();
    let mean = h.iter().map(|v| v.abs()).sum::<f64>() / h.len() as f64;
    assert!(mean > 0.0 && mean <= 1e-3, "{mean}");
}

#[test]
fn correction_config_is_validated() {
    let t = complete(&[UnicycleControl::default(); 3], &UnicycleState::default(), 0.3).unwrap();
    let set = ConstraintSet::mobile_robot(UnicycleControl::default(), Vec::new());
    assert!(correct(&t, &set, &cfg(0.0, 5, CorrectionMode::Linearized)).is_err());
    let d = CorrectionConfig::default();
    assert_eq!((d.gamma, d.n_grad, d.mode), (1e-3, 5, CorrectionMode::Linearized));
}

#[test]
fn distance_loss_examples() {
    let gt = complete(&[UnicycleControl::new(1.0, 0.0); 3], &UnicycleState::default(), 0.3).unwrap();
    assert_eq!(distance_loss(&gt, &gt).unwrap(), 0.0);

    let mut flipped = gt.clone();
    flipped.states[2].phi = std::f64::consts::PI;
    assert!((distance_loss(&flipped, &gt).unwrap() - 4.0).abs() < 1e-12);

    let mut shifted = gt.clone();
    shifted.states[1].x += 1.0;
    shifted.states[1].y += 1.0;
    assert!((distance_loss(&shifted, &gt).unwrap() - 2.0).abs() < 1e-12);

    let mut initial = gt.clone();
    initial.states[0].x += 5.0;
    assert_eq!(distance_loss(&initial, &gt).unwrap(), 0.0);

    let short = complete(&[UnicycleControl::new(1.0, 0.0); 2], &UnicycleState::default(), 0.3).unwrap();
    assert!(distance_loss(&short, &gt).is_err());
}

#[test]
fn soft_loss_examples() {
    let u = vec![UnicycleControl::new(0.5, 0.0); 5];
    let gt = complete(&u, &UnicycleState::default(), 0.3).unwrap();
    let free = ConstraintSet::mobile_robot(UnicycleControl::new(0.5, 0.0), Vec::new());
    let w = SoftLossWeights::default();
    assert_eq!((w.lambda_g, w.lambda_h), (0.5, 0.5));
    assert_eq!(soft_loss(&gt, &gt, &free, &w, CorrectionMode::Recompleted).unwrap(), 0.0);

    // Two violated rows of 0.3 and 0.4 on the speed box.
    let mut pred_u = u.clone();
    pred_u[0].v = 1.3;
    pred_u[1].v = 1.4;
    let set = box_only(1.3);
    let pred = Trajectory {
        states: gt.states.clone(),
        controls: pred_u,
        dt: 0.3,
    };
    let only_g = SoftLossWeights { lambda_g: 0.5, lambda_h: 0.0 };
    let v = soft_loss(&pred, &gt, &set, &only_g, CorrectionMode::Linearized).unwrap();
    assert!((v - 0.25).abs() < 1e-12, "{v}");

    let none = SoftLossWeights::ZERO;
    let d = distance_loss(&pred, &gt).unwrap();
    assert_eq!(soft_loss(&pred, &gt, &set, &none, CorrectionMode::Linearized).unwrap(), d);
    let negative = SoftLossWeights { lambda_g: -1.0, lambda_h: 0.0 };
    assert!(soft_loss(&pred, &gt, &set, &negative, CorrectionMode::Linearized).is_err());
}

fn feasible_controls() -> impl Strategy<Value = (UnicycleControl, Vec<UnicycleControl>)> {
    // Random walks that stay strictly inside every box.
    (0.0..0.8f64, -0.5..0.5f64, prop::collection::vec((-0.05..0.05f64, -0.18..0.18f64), 10)).prop_map(
        |(v0, w0, steps)| {
            let prev = UnicycleControl::new(v0, w0);
            let mut cur = prev;
            let u = steps
                .into_iter()
                .map(|(dv, dw)| {
                    cur = UnicycleControl::new((cur.v + dv).clamp(-0.45, 0.95), (cur.omega + dw).clamp(-0.65, 0.65));
                    cur
                })
                .collect();
            (prev, u)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn feasible_fixed_point((prev, u) in feasible_controls(), mode in prop_oneof![Just(CorrectionMode::Linearized), Just(CorrectionMode::Recompleted)]) {
        let set = ConstraintSet::mobile_robot(prev, Vec::new());
        let t = complete(&u, &UnicycleState::default(), 0.3).unwrap();
        prop_assert_eq!(trajectory_penalty(&t, &set).unwrap(), 0.0);
        prop_assert_eq!(correct(&t, &set, &cfg(1e-3, 5, mode)).unwrap(), t);
    }

    #[test]
    fn small_steps_never_increase_the_penalty(
        (prev, u) in feasible_controls(),
        kick in prop::collection::vec((-0.4..0.4f64, -0.4..0.4f64), 10),
        ox in 1.0..4.0f64, oy in -1.5..1.5f64, r in 0.1..1.0f64,
    ) {
        let u: Vec<_> = u.iter().zip(&kick).map(|(c, k)| UnicycleControl::new(c.v + k.0, c.omega + k.1)).collect();
        let set = ConstraintSet::mobile_robot(prev, vec![Circle::new(ox, oy, r)]);
        let t = complete(&u, &UnicycleState::default(), 0.3).unwrap();
        let report = correct_traced(&t, &set, &cfg(1e-4, 5, CorrectionMode::Recompleted)).unwrap();
        for w in report.penalties.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}
