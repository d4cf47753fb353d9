use std::f64::consts::PI;

use dcil::constrained::complete;
use dcil::dynamics::{
    equality_residual, flatness_controls, unicycle_step, unroll, Bicycle, BicycleControl, BicycleState,
    UnicycleControl, UnicycleState,
};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn euler_step_forward() {
    let s = unicycle_step(&UnicycleState::default(), &UnicycleControl::new(1.0, 0.0), 0.3).unwrap();
    assert!(close(s.x, 0.3, 1e-15) && s.y == 0.0 && s.phi == 0.0);
}

#[test]
fn euler_step_facing_backwards() {
    let s = unicycle_step(&UnicycleState::new(0.0, 0.0, PI), &UnicycleControl::new(1.0, 0.0), 0.3).unwrap();
    assert!(close(s.x, -0.3, 1e-15));
    assert!(s.y.abs() < 1e-15);
    assert_eq!(s.phi, PI);
}

#[test]
fn zero_control_is_a_fixed_point() {
    let s0 = UnicycleState::new(1.5, -2.0, 0.7);
    assert_eq!(unicycle_step(&s0, &UnicycleControl::default(), 0.3).unwrap(), s0);
}

#[test]
fn step_rejects_bad_input() {
    let s = UnicycleState::default();
    assert!(unicycle_step(&s, &UnicycleControl::new(1.0, 0.0), 0.0).is_err());
    assert!(unicycle_step(&s, &UnicycleControl::new(f64::NAN, 0.0), 0.3).is_err());
}

#[test]
fn ten_unit_steps_reach_three_metres() {
    let u = vec![UnicycleControl::new(1.0, 0.0); 10];
    let states = unroll(&UnicycleState::default(), &u, 0.3).unwrap();
    let last = states.last().unwrap();
    assert_eq!(states.len(), 11);
    assert!(close(last.x, 3.0, 1e-12) && last.y == 0.0 && last.phi == 0.0);
}

#[test]
fn perturbed_state_shows_up_once_in_the_residual() {
    let u = vec![UnicycleControl::new(0.8, 0.2); 4];
    let mut states = unroll(&UnicycleState::default(), &u, 0.3).unwrap();
    states[4].x += 0.1;
    let h = equality_residual(&states, &u, 0.3).unwrap();
    assert_eq!(h.len(), 12);
    let nonzero: Vec<usize> = (0..12).filter(|&i| h[i] != 0.0).collect();
    assert_eq!(nonzero, vec![9]);
    assert!(close(h[9], 0.1, 1e-12));
}

#[test]
fn empty_horizon_has_empty_residual() {
    let h = equality_residual(&[UnicycleState::default()], &[], 0.3).unwrap();
    assert!(h.is_empty());
    assert!(equality_residual(&[UnicycleState::default()], &[UnicycleControl::default()], 0.3).is_err());
}

#[test]
fn heading_residual_ignores_full_turns() {
    let u = [UnicycleControl::new(0.0, 0.0)];
    let states = [UnicycleState::default(), UnicycleState { x: 0.0, y: 0.0, phi: 2.0 * PI }];
    let h = equality_residual(&states, &u, 0.3).unwrap();
    assert!(h[2].abs() < 1e-12);
}

#[test]
fn flatness_examples() {
    let straight = [UnicycleState::default(), UnicycleState::new(0.3, 0.0, 0.0)];
    let u = flatness_controls(&straight, 0.3).unwrap();
    assert!(close(u[0].v, 1.0, 1e-12) && u[0].omega == 0.0);
    let still = [UnicycleState::new(1.0, 1.0, 0.4); 2];
    let u = flatness_controls(&still, 0.3).unwrap();
    assert_eq!((u[0].v, u[0].omega), (0.0, 0.0));
    assert!(flatness_controls(&still, 0.0).is_err());
    assert!(flatness_controls(&still[..1], 0.3).is_err());
}

#[test]
fn flatness_reports_reversing_as_negative_speed() {
    let states = unroll(&UnicycleState::new(0.0, 0.0, 1.0), &[UnicycleControl::new(-0.5, 0.0)], 0.3).unwrap();
    let u = flatness_controls(&states, 0.3).unwrap();
    assert!(close(u[0].v, -0.5, 1e-12));
}

#[test]
fn bicycle_examples() {
    let car = Bicycle::default();
    assert_eq!(car.wheelbase, 2.85);
    let s0 = BicycleState { v: 2.0, ..Default::default() };
    let s = car.step(&s0, &BicycleControl::default(), 0.2).unwrap();
    assert!(close(s.x, 0.4, 1e-15) && s.v == 2.0 && s.phi == 0.0);

    let parked = BicycleState { x: 1.0, y: 2.0, phi: 0.5, v: 0.0 };
    let s = car.step(&parked, &BicycleControl { a: 1.0, delta: 0.3 }, 0.2).unwrap();
    assert_eq!((s.x, s.y, s.phi), (1.0, 2.0, 0.5));
    assert!(close(s.v, 0.2, 1e-15));

    let s = car.step(&s0, &BicycleControl { a: -2.0 / 0.2, delta: 0.0 }, 0.2).unwrap();
    assert_eq!(s.v, 0.0);

    assert!(car.step(&s0, &BicycleControl { a: 0.0, delta: PI / 2.0 }, 0.2).is_err());
    assert!(Bicycle::new(0.0).is_err());
}

#[test]
fn bicycle_turns_with_the_expected_yaw_rate() {
    let car = Bicycle::new(2.0).unwrap();
    let s0 = BicycleState { v: 4.0, ..Default::default() };
    let s = car.step(&s0, &BicycleControl { a: 0.0, delta: 0.25 }, 0.1).unwrap();
    assert!(close(s.phi, 4.0 / 2.0 * 0.25f64.tan() * 0.1, 1e-15));
}

fn control() -> impl Strategy<Value = UnicycleControl> {
    (-0.5..1.0f64, -0.7..0.7f64).prop_map(|(v, w)| UnicycleControl::new(v, w))
}

fn state() -> impl Strategy<Value = UnicycleState> {
    (-50.0..50.0f64, -50.0..50.0f64, -10.0..10.0f64).prop_map(|(x, y, p)| UnicycleState::new(x, y, p))
}

proptest! {
    #[test]
    fn headings_stay_wrapped(s in state(), u in (-5.0..5.0f64, -20.0..20.0f64), dt in 0.01..1.0f64) {
        let next = unicycle_step(&s, &UnicycleControl::new(u.0, u.1), dt).unwrap();
        prop_assert!(next.phi > -PI && next.phi <= PI);
    }

    #[test]
    fn steps_are_pure(s in state(), u in control()) {
        let a = unicycle_step(&s, &u, 0.3).unwrap();
        let b = unicycle_step(&s, &u, 0.3).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn completion_has_zero_residual(x0 in state(), u in prop::collection::vec(control(), 0..15)) {
        let t = complete(&u, &x0, 0.3).unwrap();
        for h in equality_residual(&t.states, &u, 0.3).unwrap() {
            prop_assert!(h.abs() <= 1e-12);
        }
    }

    #[test]
    fn flatness_inverts_completion(x0 in state(), u in prop::collection::vec(control(), 1..15)) {
        let states = unroll(&x0, &u, 0.3).unwrap();
        let back = flatness_controls(&states, 0.3).unwrap();
        for (a, b) in u.iter().zip(&back) {
            prop_assert!((a.v - b.v).abs() <= 1e-9 && (a.omega - b.omega).abs() <= 1e-9);
        }
    }
}
