//! The robot starts inside the safety margin of an obstacle, so no
//! trajectory can satisfy every row. Inference still returns a finite plan
//! and the correction pushes it away from the obstacle.
//!
//! ```text
//! cargo run --release --example infeasible_start -- [checkpoint]
//! ```

use dcil::baselines::{dcil_infer, MethodConfig};
use dcil::constraints::{select_obstacles, ConstraintSet, OBSTACLE_SLOTS};
use dcil::dynamics::{UnicycleControl, UnicycleState};
use dcil::geometry::Circle;
use dcil::policy::{HeadKind, NetConfig, PolicyNet};
use dcil::sim::{render_occupancy, Measurements, RolloutConfig};

fn main() -> dcil::Result<()> {
    let net = match std::env::args().nth(1) {
        Some(path) => PolicyNet::load(path)?.0,
        None => PolicyNet::new(NetConfig::default().with_head(HeadKind::Controls), 0)?,
    };
    let bounds = RolloutConfig::default().bounds;
    let pose = UnicycleState::default();
    let current = UnicycleControl::new(0.6, 0.0);
    let goal = [12.0, 0.0];

    for gap in [1.55, 1.3, 1.0] {
        let obstacles = vec![Circle::new(gap, 0.4, 0.5), Circle::new(6.0, -3.0, 1.0)];
        let set = ConstraintSet {
            bounds,
            ..ConstraintSet::mobile_robot(current, select_obstacles(&obstacles, &pose, OBSTACLE_SLOTS))
        };
        let image = render_occupancy(&obstacles, &pose, &net.config);
        let meas = Measurements::new(goal, &pose, &current).normalized(&bounds);
        for (label, n_grad) in [("5 steps", 5), ("50 steps", 50)] {
            let mut config = MethodConfig::default();
            config.correction.n_grad = n_grad;
            let out = dcil_infer(&net, &config, &image, &meas, &set)?;
            let clearance = |t: &dcil::constrained::Trajectory| {
                t.states[1..]
                    .iter()
                    .map(|s| (s.x - gap).hypot(s.y - 0.4) - 1.5)
                    .fold(f64::INFINITY, f64::min)
            };
            println!(
                "obstacle at {gap:.2} m, {label:8}: penalty {:.4e} -> {:.4e}, min clearance {:+.4} -> {:+.4}",
                out.penalty_before,
                out.penalty_after,
                clearance(&out.completed),
                clearance(&out.corrected)
            );
        }
    }
    Ok(())
}
