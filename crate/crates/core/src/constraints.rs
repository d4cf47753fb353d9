//! The inequality vector `g` (rows `≤ 0` are satisfied) and its ReLU penalty.
//!
//! A [`ConstraintSet`] is expressed in the robot frame of its sample. Rows
//! are built as graph nodes so that the same code serves numeric
//! evaluation, the correction gradient and the training loss.

use dcil_autodiff::{Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::dynamics::{shift_in, StateNodes, UnicycleControl, UnicycleState};
use crate::error::{check_len, Error, Result};
use crate::geometry::{polyline_distance_graph, Circle, Corridor, Side};

/// Number of obstacle slots per time step.
pub const OBSTACLE_SLOTS: usize = 3;
/// Where padding obstacles and inactive stop lines are placed.
pub const FAR_AWAY: f64 = 1e3;
/// Added to squared distances so the distance stays differentiable at 0.
pub const DISTANCE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Box limits on unicycle controls and their finite-difference rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicBounds {
    pub v: Interval,
    pub omega: Interval,
    pub accel: Interval,
    pub omega_dot: Interval,
}

impl Default for KinematicBounds {
    fn default() -> Self {
        Self {
            v: Interval::new(-0.5, 1.0),
            omega: Interval::new(-0.7, 0.7),
            accel: Interval::new(-0.2, 0.2),
            omega_dot: Interval::new(-0.7, 0.7),
        }
    }
}

impl KinematicBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, i) in [
            ("v", self.v),
            ("omega", self.omega),
            ("accel", self.accel),
            ("omega_dot", self.omega_dot),
        ] {
            if !(i.lo <= i.hi) {
                return Err(Error::invalid(format!("bound {name}: lower {} > upper {}", i.lo, i.hi)));
            }
        }
        Ok(())
    }

    /// Whether `u` (applied after `prev`) violates any box by more than `tol`.
    pub fn violated(&self, u: &UnicycleControl, prev: &UnicycleControl, dt: f64, tol: f64) -> bool {
        let a = (u.v - prev.v) / dt;
        let wd = (u.omega - prev.omega) / dt;
        !(self.v.contains(u.v, tol)
            && self.omega.contains(u.omega, tol)
            && self.accel.contains(a, tol)
            && self.omega_dot.contains(wd, tol))
    }
}

/// Row weights `α`, one value per constraint family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintWeights {
    pub kinematic: f64,
    pub collision: f64,
    pub stop_line: f64,
}

impl ConstraintWeights {
    pub const UNIFORM: Self = Self {
        kinematic: 1.0,
        collision: 1.0,
        stop_line: 1.0,
    };

    /// Weights for the driving setting: stop-line rows count double.
    pub const DRIVING: Self = Self {
        kinematic: 1.0,
        collision: 1.0,
        stop_line: 2.0,
    };
}

impl Default for ConstraintWeights {
    fn default() -> Self {
        Self::UNIFORM
    }
}

/// A stop line: rows are the signed distance of the reference point beyond
/// `point` along `dir`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    pub point: [f64; 2],
    pub dir: [f64; 2],
}

impl StopLine {
    /// A line perpendicular to the heading of `pose`, `distance_ahead` metres
    /// in front of it when active and [`FAR_AWAY`] otherwise.
    pub fn new(active: bool, pose: &UnicycleState, distance_ahead: f64) -> Self {
        let d = if active { distance_ahead } else { FAR_AWAY };
        let (s, c) = pose.phi.sin_cos();
        Self {
            point: [pose.x + d * c, pose.y + d * s],
            dir: [c, s],
        }
    }

    pub fn row(&self, x: f64, y: f64) -> f64 {
        (x - self.point[0]) * self.dir[0] + (y - self.point[1]) * self.dir[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub bounds: KinematicBounds,
    /// Measured controls at the sample time, used as `u_{-1}` for the
    /// finite-difference rate rows.
    pub prev_control: UnicycleControl,
    pub robot_radius: f64,
    pub clearance_margin: f64,
    pub obstacles: Vec<Circle>,
    pub corridor: Option<Corridor>,
    pub stop_line: Option<StopLine>,
    pub weights: ConstraintWeights,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKind {
    VelocityMax,
    VelocityMin,
    OmegaMax,
    OmegaMin,
    AccelMax,
    AccelMin,
    OmegaDotMax,
    OmegaDotMin,
    Obstacle,
    CorridorLeft,
    CorridorRight,
    StopLine,
}

impl RowKind {
    pub fn is_kinematic(self) -> bool {
        matches!(
            self,
            RowKind::VelocityMax
                | RowKind::VelocityMin
                | RowKind::OmegaMax
                | RowKind::OmegaMin
                | RowKind::AccelMax
                | RowKind::AccelMin
                | RowKind::OmegaDotMax
                | RowKind::OmegaDotMin
        )
    }
}

/// Identifies one row of `g`: its family, time index and entity (obstacle
/// slot or footprint circle; 0 otherwise). Control rows use `k = 0..H-1`,
/// state rows `k = 1..H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowLabel {
    pub kind: RowKind,
    pub step: usize,
    pub entity: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InequalityVector {
    pub values: Vec<f64>,
    pub labels: Vec<RowLabel>,
}

impl InequalityVector {
    pub fn max_violation(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Graph handles for the rows of a set.
#[derive(Clone, Debug)]
pub struct RowNodes {
    pub g: NodeId,
    pub alpha: Vec<f64>,
}

impl ConstraintSet {
    /// A set with the default boxes, padded obstacle slots and no corridor or
    /// stop line.
    pub fn mobile_robot(prev_control: UnicycleControl, obstacles: Vec<Circle>) -> Self {
        Self {
            bounds: KinematicBounds::default(),
            prev_control,
            robot_radius: 1.0,
            clearance_margin: 0.1,
            obstacles: pad_obstacles(obstacles),
            corridor: None,
            stop_line: None,
            weights: ConstraintWeights::UNIFORM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        let w = self.weights;
        if !(w.kinematic > 0.0 && w.collision > 0.0 && w.stop_line > 0.0) {
            return Err(Error::invalid("constraint weights must be strictly positive"));
        }
        Ok(())
    }

    /// Row labels in the order produced by [`ConstraintSet::rows_graph`].
    pub fn labels(&self, horizon: usize, with_controls: bool) -> Vec<RowLabel> {
        let mut out = Vec::new();
        let mut block = |kind, entity, steps: std::ops::Range<usize>| {
            for step in steps {
                out.push(RowLabel { kind, step, entity });
            }
        };
        if with_controls {
            for kind in [
                RowKind::VelocityMax,
                RowKind::VelocityMin,
                RowKind::OmegaMax,
                RowKind::OmegaMin,
                RowKind::AccelMax,
                RowKind::AccelMin,
                RowKind::OmegaDotMax,
                RowKind::OmegaDotMin,
            ] {
                block(kind, 0, 0..horizon);
            }
        }
        for j in 0..self.obstacles.len() {
            block(RowKind::Obstacle, j, 1..horizon + 1);
        }
        if let Some(c) = &self.corridor {
            for i in 0..c.footprint.len() {
                block(RowKind::CorridorLeft, i, 1..horizon + 1);
                block(RowKind::CorridorRight, i, 1..horizon + 1);
            }
        }
        if self.stop_line.is_some() {
            block(RowKind::StopLine, 0, 1..horizon + 1);
        }
        out
    }

    /// The weight of each row, aligned with [`ConstraintSet::labels`].
    pub fn alpha(&self, horizon: usize, with_controls: bool) -> Vec<f64> {
        self.labels(horizon, with_controls)
            .iter()
            .map(|l| match l.kind {
                k if k.is_kinematic() => self.weights.kinematic,
                RowKind::StopLine => self.weights.stop_line,
                _ => self.weights.collision,
            })
            .collect()
    }

    /// Builds `g` for predicted states (and optionally controls) as a
    /// single vector node.
    pub fn rows_graph(
        &self,
        g: &mut Graph,
        controls: Option<NodeId>,
        states: &StateNodes,
        dt: f64,
    ) -> RowNodes {
        let horizon = g.numel(states.x);
        let mut parts = Vec::new();
        if let Some(u) = controls {
            let b = &self.bounds;
            let v = g.slice(u, 0, horizon);
            let w = g.slice(u, horizon, horizon);
            let upper = |g: &mut Graph, n: NodeId, hi: f64| g.offset(n, -hi);
            let lower = |g: &mut Graph, n: NodeId, lo: f64| {
                let m = g.neg(n);
                g.offset(m, lo)
            };
            parts.push(upper(g, v, b.v.hi));
            parts.push(lower(g, v, b.v.lo));
            parts.push(upper(g, w, b.omega.hi));
            parts.push(lower(g, w, b.omega.lo));
            let rate = |g: &mut Graph, n: NodeId, first: f64| {
                let prev = shift_in(g, n, first, horizon);
                let d = g.sub(n, prev);
                g.scale(d, 1.0 / dt)
            };
            let a = rate(g, v, self.prev_control.v);
            let wd = rate(g, w, self.prev_control.omega);
            parts.push(upper(g, a, b.accel.hi));
            parts.push(lower(g, a, b.accel.lo));
            parts.push(upper(g, wd, b.omega_dot.hi));
            parts.push(lower(g, wd, b.omega_dot.lo));
        }
        for ob in &self.obstacles {
            let dx = g.offset(states.x, -ob.cx);
            let dy = g.offset(states.y, -ob.cy);
            let dx2 = g.square(dx);
            let dy2 = g.square(dy);
            let s = g.add(dx2, dy2);
            let s = g.offset(s, DISTANCE_EPS);
            let d = g.sqrt(s);
            let nd = g.neg(d);
            parts.push(g.offset(nd, self.robot_radius + ob.r + self.clearance_margin));
        }
        if let Some(corridor) = &self.corridor {
            let c = g.cos(states.phi);
            let s = g.sin(states.phi);
            for fp in &corridor.footprint {
                let ox = g.scale(c, fp.offset);
                let oy = g.scale(s, fp.offset);
                let px = g.add(states.x, ox);
                let py = g.add(states.y, oy);
                // The left boundary's interior is to its right and vice versa.
                for (line, inside) in [(&corridor.left, Side::Right), (&corridor.right, Side::Left)] {
                    let sd = polyline_distance_graph(g, line, inside, px, py);
                    let n = g.neg(sd);
                    parts.push(g.offset(n, fp.radius));
                }
            }
        }
        if let Some(sl) = &self.stop_line {
            let ex = g.offset(states.x, -sl.point[0]);
            let ey = g.offset(states.y, -sl.point[1]);
            let a = g.scale(ex, sl.dir[0]);
            let b = g.scale(ey, sl.dir[1]);
            parts.push(g.add(a, b));
        }
        let node = g.concat(&parts);
        RowNodes {
            g: node,
            alpha: self.alpha(horizon, controls.is_some()),
        }
    }
}

/// Pads (or truncates) an obstacle list to [`OBSTACLE_SLOTS`] entries.
pub fn pad_obstacles(mut obstacles: Vec<Circle>) -> Vec<Circle> {
    obstacles.truncate(OBSTACLE_SLOTS);
    while obstacles.len() < OBSTACLE_SLOTS {
        obstacles.push(Circle::new(FAR_AWAY, 0.0, 0.0));
    }
    obstacles
}

/// The `k` nearest obstacles in the front half-plane of `pose`, expressed in
/// the robot frame and padded with far-away dummies.
pub fn select_obstacles(obstacles: &[Circle], pose: &UnicycleState, k: usize) -> Vec<Circle> {
    let mut front: Vec<(f64, Circle)> = obstacles
        .iter()
        .filter_map(|o| {
            let (lx, ly) = pose.to_local(o.cx, o.cy);
            (lx > 0.0).then(|| (lx.hypot(ly), Circle::new(lx, ly, o.r)))
        })
        .collect();
    front.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<Circle> = front.into_iter().take(k).map(|(_, c)| c).collect();
    while out.len() < k {
        out.push(Circle::new(FAR_AWAY, 0.0, 0.0));
    }
    out
}

/// `‖ReLU(α ⊙ g)‖²` when `squared`, otherwise `‖ReLU(α ⊙ g)‖`.
pub fn penalty(g: &[f64], alpha: &[f64], squared: bool) -> Result<f64> {
    check_len("alpha", g.len(), alpha.len())?;
    if alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::invalid("alpha must be strictly positive"));
    }
    let s: f64 = g
        .iter()
        .zip(alpha)
        .map(|(g, a)| {
            let r = (a * g).max(0.0);
            r * r
        })
        .sum();
    Ok(if squared { s } else { s.sqrt() })
}

/// Graph form of [`penalty`].
pub fn penalty_graph(g: &mut Graph, rows: &RowNodes, squared: bool) -> NodeId {
    let weighted = g.mul_const(rows.g, rows.alpha.clone());
    let r = g.relu(weighted);
    if squared {
        let sq = g.square(r);
        g.sum(sq)
    } else {
        g.l2_norm(r)
    }
}

/// Numeric `g` for a pose sequence `x_0..x_H` and optional controls.
pub fn eval_inequalities(
    states: &[UnicycleState],
    controls: Option<&[UnicycleControl]>,
    set: &ConstraintSet,
    dt: f64,
) -> Result<InequalityVector> {
    if states.len() < 2 {
        return Err(Error::Length {
            what: "state sequence",
            expected: 2,
            got: states.len(),
        });
    }
    let horizon = states.len() - 1;
    if let Some(u) = controls {
        check_len("control sequence", horizon, u.len())?;
        if u.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("controls"));
        }
    }
    if states.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("states"));
    }
    let mut g = Graph::new();
    let sn = constant_states(&mut g, &states[1..]);
    let u = controls.map(|u| {
        let mut data: Vec<f64> = u.iter().map(|c| c.v).collect();
        data.extend(u.iter().map(|c| c.omega));
        g.vector(data)
    });
    let rows = set.rows_graph(&mut g, u, &sn, dt);
    g.eval()?;
    Ok(InequalityVector {
        values: g.value(rows.g).unwrap().data().to_vec(),
        labels: set.labels(horizon, controls.is_some()),
    })
}

pub(crate) fn constant_states(g: &mut Graph, states: &[UnicycleState]) -> StateNodes {
    let col = |f: fn(&UnicycleState) -> f64| Tensor::vector(states.iter().map(f).collect());
    StateNodes {
        x: g.constant(col(|s| s.x)),
        y: g.constant(col(|s| s.y)),
        phi: g.constant(col(|s| s.phi)),
    }
}
