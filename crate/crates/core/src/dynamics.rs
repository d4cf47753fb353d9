//! Discrete-time robot models.
//!
//! Both models use an explicit Euler step. Headings are kept in `(-π, π]`.
//! The unicycle additionally has a graph form used for completion inside
//! the training graph, and a flatness inverse that recovers controls from
//! consecutive poses.

use dcil_autodiff::{wrap_angle, Graph, NodeId};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnicycleState {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl UnicycleState {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self {
            x,
            y,
            phi: wrap_angle(phi),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.phi.is_finite()
    }

    /// Expresses a world-frame point in this pose's body frame.
    pub fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.phi.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Maps a body-frame point to the world frame.
    pub fn to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.phi.sin_cos();
        (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
    }

    /// This pose expressed relative to `origin`.
    pub fn relative_to(&self, origin: &UnicycleState) -> UnicycleState {
        let (x, y) = origin.to_local(self.x, self.y);
        UnicycleState::new(x, y, self.phi - origin.phi)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnicycleControl {
    pub v: f64,
    pub omega: f64,
}

impl UnicycleControl {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }
}

pub fn unicycle_step(s: &UnicycleState, u: &UnicycleControl, dt: f64) -> Result<UnicycleState> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !s.is_finite() || !u.is_finite() {
        return Err(Error::NonFinite("unicycle step input"));
    }
    let (sin, cos) = s.phi.sin_cos();
    Ok(UnicycleState {
        x: s.x + u.v * cos * dt,
        y: s.y + u.v * sin * dt,
        phi: wrap_angle(s.phi + u.omega * dt),
    })
}

/// Iterates the unicycle model from `x0`; returns `H + 1` states.
pub fn unroll(x0: &UnicycleState, controls: &[UnicycleControl], dt: f64) -> Result<Vec<UnicycleState>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    for u in controls {
        let next = unicycle_step(states.last().unwrap(), u, dt)?;
        states.push(next);
    }
    Ok(states)
}

/// Per-step residual `x_{k+1} - f(x_k, u_k)`, laid out `[dx, dy, dphi]` per
/// step. The heading component is the wrapped angular difference.
pub fn equality_residual(
    states: &[UnicycleState],
    controls: &[UnicycleControl],
    dt: f64,
) -> Result<Vec<f64>> {
    check_len("state sequence", controls.len() + 1, states.len())?;
    let mut h = Vec::with_capacity(3 * controls.len());
    for (k, u) in controls.iter().enumerate() {
        let pred = unicycle_step(&states[k], u, dt)?;
        let next = &states[k + 1];
        h.push(next.x - pred.x);
        h.push(next.y - pred.y);
        h.push(wrap_angle(next.phi - pred.phi));
    }
    Ok(h)
}

/// Recovers unicycle controls from a pose sequence.
///
/// `v_k` is the displacement projected on heading `k` divided by `dt` (so
/// reversing yields a negative speed); `ω_k` is the wrapped heading change
/// divided by `dt`.
pub fn flatness_controls(states: &[UnicycleState], dt: f64) -> Result<Vec<UnicycleControl>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if states.len() < 2 {
        return Err(Error::Length {
            what: "state sequence for flatness",
            expected: 2,
            got: states.len(),
        });
    }
    Ok(states
        .windows(2)
        .map(|w| {
            let (s, c) = w[0].phi.sin_cos();
            let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
            UnicycleControl {
                v: (c * dx + s * dy) / dt,
                omega: wrap_angle(w[1].phi - w[0].phi) / dt,
            }
        })
        .collect())
}

/// Predicted states `x_1..x_H` as graph nodes, one `[H]` vector per
/// coordinate. The initial state is a known constant and is not included.
#[derive(Clone, Copy, Debug)]
pub struct StateNodes {
    pub x: NodeId,
    pub y: NodeId,
    pub phi: NodeId,
}

/// `[first, seq_0, .., seq_{H-2}]`: the sequence delayed by one step.
pub(crate) fn shift_in(g: &mut Graph, seq: NodeId, first: f64, horizon: usize) -> NodeId {
    let first = g.scalar(first);
    if horizon == 1 {
        first
    } else {
        let rest = g.slice(seq, 0, horizon - 1);
        g.concat(&[first, rest])
    }
}

/// Graph form of [`unroll`]. `u` holds `[v_0..v_{H-1}, ω_0..ω_{H-1}]`.
///
/// The recursion is written with prefix sums, so the graph has a fixed
/// number of nodes independent of the horizon.
pub fn unroll_graph(g: &mut Graph, u: NodeId, x0: &UnicycleState, dt: f64) -> StateNodes {
    let horizon = g.numel(u) / 2;
    let v = g.slice(u, 0, horizon);
    let w = g.slice(u, horizon, horizon);
    let dphi = g.scale(w, dt);
    let cum = g.cumsum(dphi);
    let phi = g.offset(cum, x0.phi);
    let phi = g.wrap_angle(phi);
    let prev = shift_in(g, phi, x0.phi, horizon);
    let vdt = g.scale(v, dt);
    let c = g.cos(prev);
    let s = g.sin(prev);
    let dx = g.mul(vdt, c);
    let dy = g.mul(vdt, s);
    let cx = g.cumsum(dx);
    let cy = g.cumsum(dy);
    let x = g.offset(cx, x0.x);
    let y = g.offset(cy, x0.y);
    StateNodes { x, y, phi }
}

/// Equality residual of graph states against graph controls, as one vector
/// `[hx_1..hx_H, hy_1..hy_H, hphi_1..hphi_H]`.
pub fn residual_graph(
    g: &mut Graph,
    states: &StateNodes,
    u: NodeId,
    x0: &UnicycleState,
    dt: f64,
) -> NodeId {
    let horizon = g.numel(u) / 2;
    let v = g.slice(u, 0, horizon);
    let w = g.slice(u, horizon, horizon);
    let prev = |g: &mut Graph, n: NodeId, first: f64| shift_in(g, n, first, horizon);
    let xp = prev(g, states.x, x0.x);
    let yp = prev(g, states.y, x0.y);
    let pp = prev(g, states.phi, x0.phi);
    let vdt = g.scale(v, dt);
    let c = g.cos(pp);
    let s = g.sin(pp);
    let mx = g.mul(vdt, c);
    let my = g.mul(vdt, s);
    let ex = g.sub(states.x, xp);
    let hx = g.sub(ex, mx);
    let ey = g.sub(states.y, yp);
    let hy = g.sub(ey, my);
    let wdt = g.scale(w, dt);
    let ep = g.sub(states.phi, pp);
    let hp = g.sub(ep, wdt);
    let hp = g.wrap_angle(hp);
    g.concat(&[hx, hy, hp])
}

/// Flatness controls of graph states, `[v_0..v_{H-1}, ω_0..ω_{H-1}]`, plus
/// the lateral slip that the unicycle cannot realise (the position residual
/// left after applying those controls), `[hx.., hy..]`.
pub fn flatness_graph(g: &mut Graph, states: &StateNodes, x0: &UnicycleState, dt: f64) -> (NodeId, NodeId) {
    let horizon = g.numel(states.x);
    let xp = shift_in(g, states.x, x0.x, horizon);
    let yp = shift_in(g, states.y, x0.y, horizon);
    let pp = shift_in(g, states.phi, x0.phi, horizon);
    let dx = g.sub(states.x, xp);
    let dy = g.sub(states.y, yp);
    let c = g.cos(pp);
    let s = g.sin(pp);
    let a = g.mul(dx, c);
    let b = g.mul(dy, s);
    let along = g.add(a, b);
    let v = g.scale(along, 1.0 / dt);
    let dp = g.sub(states.phi, pp);
    let dp = g.wrap_angle(dp);
    let w = g.scale(dp, 1.0 / dt);
    let u = g.concat(&[v, w]);
    let px = g.mul(along, c);
    let py = g.mul(along, s);
    let hx = g.sub(dx, px);
    let hy = g.sub(dy, py);
    let h = g.concat(&[hx, hy]);
    (u, h)
}

/// Kinematic bicycle with rear-axle reference point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bicycle {
    pub wheelbase: f64,
}

impl Default for Bicycle {
    fn default() -> Self {
        Self { wheelbase: 2.85 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BicycleState {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BicycleControl {
    pub a: f64,
    pub delta: f64,
}

impl Bicycle {
    pub fn new(wheelbase: f64) -> Result<Self> {
        if !(wheelbase > 0.0) {
            return Err(Error::invalid(format!("wheelbase must be positive, got {wheelbase}")));
        }
        Ok(Self { wheelbase })
    }

    pub fn step(&self, s: &BicycleState, u: &BicycleControl, dt: f64) -> Result<BicycleState> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if u.delta.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::invalid(format!("steering angle {} out of range", u.delta)));
        }
        let finite = [s.x, s.y, s.phi, s.v, u.a, u.delta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("bicycle step input"));
        }
        let (sin, cos) = s.phi.sin_cos();
        Ok(BicycleState {
            x: s.x + s.v * cos * dt,
            y: s.y + s.v * sin * dt,
            phi: wrap_angle(s.phi + s.v / self.wheelbase * u.delta.tan() * dt),
            v: s.v + u.a * dt,
        })
    }

    pub fn unroll(&self, x0: &BicycleState, controls: &[BicycleControl], dt: f64) -> Result<Vec<BicycleState>> {
        let mut states = vec![*x0];
        for u in controls {
            let next = self.step(states.last().unwrap(), u, dt)?;
            states.push(next);
        }
        Ok(states)
    }
}

impl From<&BicycleState> for UnicycleState {
    fn from(s: &BicycleState) -> Self {
        UnicycleState {
            x: s.x,
            y: s.y,
            phi: s.phi,
        }
    }
}
