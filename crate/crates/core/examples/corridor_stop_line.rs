//! Driving-style constraints: a polyline corridor covered by footprint
//! circles, plus a stop line, evaluated along a kinematic-bicycle rollout.
//!
//! ```text
//! cargo run --release --example corridor_stop_line
//! ```

use dcil::constraints::{eval_inequalities, ConstraintSet, ConstraintWeights, RowKind, StopLine};
use dcil::dynamics::{Bicycle, BicycleControl, BicycleState, UnicycleControl, UnicycleState};
use dcil::geometry::{Corridor, Polyline};

fn worst(rows: &dcil::constraints::InequalityVector, kind: RowKind) -> f64 {
    rows.values
        .iter()
        .zip(&rows.labels)
        .filter(|(_, l)| l.kind == kind)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn main() -> dcil::Result<()> {
    let dt = 0.2;
    let car = Bicycle::default();
    let centerline = Polyline::new(vec![[-10.0, 0.0], [15.0, 0.0], [30.0, 5.0]])?;
    let corridor = Corridor::from_centerline(&centerline, 2.0, Corridor::car_footprint())?;

    for (label, steer, stop_at) in [
        ("centered, line inactive", 0.0, None),
        ("centered, line 12 m ahead", 0.0, Some(12.0)),
        ("steering left", 0.08, None),
    ] {
        let x0 = BicycleState {
            v: 6.0,
            ..Default::default()
        };
        let controls = vec![BicycleControl { a: -0.5, delta: steer }; 10];
        let states: Vec<UnicycleState> = car.unroll(&x0, &controls, dt)?.iter().map(UnicycleState::from).collect();
        let set = ConstraintSet {
            corridor: Some(corridor.clone()),
            stop_line: Some(StopLine::new(stop_at.is_some(), &states[0], stop_at.unwrap_or(0.0))),
            weights: ConstraintWeights::DRIVING,
            ..ConstraintSet::mobile_robot(UnicycleControl::default(), Vec::new())
        };
        let rows = eval_inequalities(&states, None, &set, dt)?;
        let end = states.last().unwrap();
        println!(
            "{label:26} end ({:5.2}, {:5.2})  left {:+.3}  right {:+.3}  stop line {:+.3}",
            end.x,
            end.y,
            worst(&rows, RowKind::CorridorLeft),
            worst(&rows, RowKind::CorridorRight),
            worst(&rows, RowKind::StopLine),
        );
    }
    Ok(())
}
