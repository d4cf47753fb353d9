//! What the planner sees: a robot-centric occupancy image and a short
//! measurement vector.

use dcil_autodiff::wrap_angle;

use crate::constraints::KinematicBounds;
use crate::dynamics::{UnicycleControl, UnicycleState};
use crate::geometry::Circle;
use crate::policy::{NetConfig, MEASUREMENT_DIM};
use crate::sim::World;

/// Scale applied to the goal distance in the measurement vector.
pub const GOAL_DISTANCE_SCALE: f64 = 10.0;

/// Binary image with the robot at `(anchor_row, anchor_col)` facing up.
///
/// Pixel `(r, c)` covers the body-frame point `((anchor_row - r) / res,
/// (anchor_col - c) / res)` and is set iff that point is strictly inside an
/// obstacle. Row-major, `image_size²` values.
pub fn render_occupancy(obstacles: &[Circle], pose: &UnicycleState, cfg: &NetConfig) -> Vec<f64> {
    let n = cfg.image_size;
    let res = cfg.resolution;
    let (ar, ac) = (cfg.anchor_row as f64, cfg.anchor_col() as f64);
    let local: Vec<Circle> = obstacles
        .iter()
        .map(|o| {
            let (lx, ly) = pose.to_local(o.cx, o.cy);
            Circle::new(lx, ly, o.r)
        })
        .collect();
    let mut img = vec![0.0; n * n];
    for c in &local {
        let r_lo = ((ar - (c.cx + c.r) * res).floor().max(0.0)) as usize;
        let r_hi = ((ar - (c.cx - c.r) * res).ceil().min(n as f64 - 1.0)).max(-1.0);
        let c_lo = ((ac - (c.cy + c.r) * res).floor().max(0.0)) as usize;
        let c_hi = ((ac - (c.cy - c.r) * res).ceil().min(n as f64 - 1.0)).max(-1.0);
        if r_hi < 0.0 || c_hi < 0.0 {
            continue;
        }
        for r in r_lo..=r_hi as usize {
            let fwd = (ar - r as f64) / res;
            for col in c_lo..=c_hi as usize {
                let left = (ac - col as f64) / res;
                if c.distance(fwd, left) < 0.0 {
                    img[r * n + col] = 1.0;
                }
            }
        }
    }
    img
}

/// `(v, ω, d_goal, θ_goal)` with the goal bearing in the robot frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurements {
    pub v: f64,
    pub omega: f64,
    pub goal_distance: f64,
    pub goal_bearing: f64,
}

impl Measurements {
    pub fn new(goal: [f64; 2], state: &UnicycleState, control: &UnicycleControl) -> Self {
        let (lx, ly) = state.to_local(goal[0], goal[1]);
        let d = lx.hypot(ly);
        Self {
            v: control.v,
            omega: control.omega,
            goal_distance: d,
            goal_bearing: if d == 0.0 { 0.0 } else { wrap_angle(ly.atan2(lx)) },
        }
    }

    /// Network input: speeds over their box widths, distance over
    /// [`GOAL_DISTANCE_SCALE`] and the bearing as a unit vector.
    pub fn normalized(&self, bounds: &KinematicBounds) -> [f64; MEASUREMENT_DIM] {
        [
            self.v / bounds.v.width(),
            self.omega / bounds.omega.width(),
            self.goal_distance / GOAL_DISTANCE_SCALE,
            self.goal_bearing.cos(),
            self.goal_bearing.sin(),
        ]
    }
}

pub fn measurements(world: &World, state: &UnicycleState, control: &UnicycleControl) -> Measurements {
    Measurements::new(world.goal, state, control)
}
