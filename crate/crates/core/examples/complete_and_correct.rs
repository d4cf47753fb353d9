//! Completes a hand-written control sequence into a trajectory, then runs the
//! penalty-gradient correction and prints how the violation shrinks.
//!
//! ```text
//! cargo run --release --example complete_and_correct
//! ```

use dcil::constrained::{complete, correct_traced, CorrectionConfig, CorrectionMode};
use dcil::constraints::{eval_inequalities, ConstraintSet};
use dcil::dynamics::{UnicycleControl, UnicycleState};
use dcil::geometry::Circle;

fn main() -> dcil::Result<()> {
    // Too fast on the first step and heading straight for an obstacle.
    let controls: Vec<UnicycleControl> = (0..10)
        .map(|k| UnicycleControl::new(if k == 0 { 1.1 } else { 0.9 }, 0.0))
        .collect();
    let set = ConstraintSet::mobile_robot(
        UnicycleControl::new(1.0, 0.0),
        vec![Circle::new(4.0, 0.3, 0.5)],
    );
    let traj = complete(&controls, &UnicycleState::default(), 0.3)?;
    let end = traj.states.last().unwrap();
    println!("completed: x_H = ({:.3}, {:.3}), residual {:.1e}", end.x, end.y, max_abs(&traj.equality_residual()?));

    let g = eval_inequalities(&traj.states, Some(&traj.controls), &set, traj.dt)?;
    println!("violated rows before correction:");
    for (v, l) in g.values.iter().zip(&g.labels).filter(|(v, _)| **v > 0.0) {
        println!("  {:?} step {} entity {}: {v:+.4}", l.kind, l.step, l.entity);
    }

    for (label, cfg) in [
        ("default (5 steps, γ=1e-3)", CorrectionConfig::default()),
        (
            "50 steps, γ=1e-2",
            CorrectionConfig {
                gamma: 1e-2,
                n_grad: 50,
                mode: CorrectionMode::Linearized,
            },
        ),
        (
            "50 steps, γ=1e-2, recompleted",
            CorrectionConfig {
                gamma: 1e-2,
                n_grad: 50,
                mode: CorrectionMode::Recompleted,
            },
        ),
    ] {
        let report = correct_traced(&traj, &set, &cfg)?;
        let out = &report.trajectory;
        println!(
            "{label}: penalty {:.3e} -> {:.3e}, v_0 {:.4} -> {:.4}, residual {:.1e}",
            report.penalties[0],
            report.penalties.last().unwrap(),
            traj.controls[0].v,
            out.controls[0].v,
            max_abs(&out.equality_residual()?),
        );
    }
    Ok(())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
