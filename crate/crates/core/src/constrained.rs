//! Completion, penalty-gradient correction and the training losses.
//!
//! Everything is built on graph nodes so that the correction loop can be
//! unrolled inside the training graph. The numeric entry points
//! ([`complete`], [`correct`], [`soft_loss`], [`distance_loss`]) wrap the
//! graph versions, so both paths agree bit for bit.

use dcil_autodiff::{Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::constraints::{constant_states, penalty, penalty_graph, ConstraintSet, RowNodes};
use crate::dynamics::{
    equality_residual, residual_graph, unroll_graph, StateNodes, UnicycleControl, UnicycleState,
};
use crate::error::{check_len, Error, Result};

/// States `x_0..x_H` and controls `u_0..u_{H-1}` at a fixed time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<UnicycleState>,
    pub controls: Vec<UnicycleControl>,
    pub dt: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_len("trajectory states", self.controls.len() + 1, self.states.len())?;
        if !self.states.iter().all(UnicycleState::is_finite) || !self.controls.iter().all(UnicycleControl::is_finite) {
            return Err(Error::NonFinite("trajectory"));
        }
        Ok(())
    }

    /// Controls as `[v_0..v_{H-1}, ω_0..ω_{H-1}]`.
    pub fn controls_flat(&self) -> Vec<f64> {
        flatten_controls(&self.controls)
    }

    pub fn equality_residual(&self) -> Result<Vec<f64>> {
        equality_residual(&self.states, &self.controls, self.dt)
    }
}

pub fn flatten_controls(u: &[UnicycleControl]) -> Vec<f64> {
    let mut out: Vec<f64> = u.iter().map(|c| c.v).collect();
    out.extend(u.iter().map(|c| c.omega));
    out
}

pub fn unflatten_controls(flat: &[f64]) -> Vec<UnicycleControl> {
    let h = flat.len() / 2;
    (0..h).map(|k| UnicycleControl::new(flat[k], flat[h + k])).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// States follow the first-order update `x - γ J Δu`.
    Linearized,
    /// States are re-unrolled from the corrected controls.
    Recompleted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionConfig {
    pub gamma: f64,
    pub n_grad: usize,
    pub mode: CorrectionMode,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            n_grad: 5,
            mode: CorrectionMode::Linearized,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::invalid(format!("correction step size must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// A trajectory living in a graph: controls `u` (`[v.., ω..]`) and the
/// predicted states `x_1..x_H`.
#[derive(Clone, Copy, Debug)]
pub struct TrajNodes {
    pub u: NodeId,
    pub states: StateNodes,
}

pub fn complete_graph(g: &mut Graph, u: NodeId, x0: &UnicycleState, dt: f64) -> TrajNodes {
    TrajNodes {
        u,
        states: unroll_graph(g, u, x0, dt),
    }
}

/// Output of [`correct_graph`].
#[derive(Clone, Debug)]
pub struct Corrected {
    pub traj: TrajNodes,
    /// `‖ReLU(α ⊙ g(u_t, f_compl(u_t)))‖²` for `t = 0..n_grad`; the last
    /// entry is only present when requested.
    pub penalties: Vec<NodeId>,
}

/// Penalty of `u` with its own completion, and the completion itself.
fn completed_penalty(
    g: &mut Graph,
    u: NodeId,
    x0: &UnicycleState,
    set: &ConstraintSet,
    dt: f64,
) -> (NodeId, StateNodes) {
    let s = unroll_graph(g, u, x0, dt);
    let rows = set.rows_graph(g, Some(u), &s, dt);
    (penalty_graph(g, &rows, true), s)
}

/// Unrolls `cfg.n_grad` correction steps as graph nodes.
///
/// Each step descends the squared penalty in `u`, differentiating through
/// the completion. States are either moved along the completion Jacobian
/// (linearized) or recomputed from the new controls.
pub fn correct_graph(
    g: &mut Graph,
    traj: TrajNodes,
    x0: &UnicycleState,
    set: &ConstraintSet,
    cfg: &CorrectionConfig,
    dt: f64,
    final_penalty: bool,
) -> Result<Corrected> {
    let mut u = traj.u;
    let mut states = traj.states;
    let mut penalties = Vec::with_capacity(cfg.n_grad + 1);
    for _ in 0..cfg.n_grad {
        let (pen, s) = completed_penalty(g, u, x0, set, dt);
        penalties.push(pen);
        let one = g.scalar(1.0);
        let Some(du) = g.grad_nodes(&[(pen, one)], &[u])?[0] else {
            continue;
        };
        let step = g.scale(du, cfg.gamma);
        if cfg.mode == CorrectionMode::Linearized {
            let jv = g.jvp_nodes(&[s.x, s.y, s.phi], &[u], &[du])?;
            let mut moved = [states.x, states.y, states.phi];
            for (m, d) in moved.iter_mut().zip(jv) {
                if let Some(d) = d {
                    let d = g.scale(d, cfg.gamma);
                    *m = g.sub(*m, d);
                }
            }
            states = StateNodes {
                x: moved[0],
                y: moved[1],
                phi: moved[2],
            };
        }
        u = g.sub(u, step);
    }
    if cfg.mode == CorrectionMode::Recompleted && cfg.n_grad > 0 {
        states = unroll_graph(g, u, x0, dt);
    }
    if final_penalty {
        let (pen, _) = completed_penalty(g, u, x0, set, dt);
        penalties.push(pen);
    }
    Ok(Corrected {
        traj: TrajNodes { u, states },
        penalties,
    })
}

fn read_traj(g: &Graph, t: &TrajNodes, x0: &UnicycleState, dt: f64) -> Trajectory {
    let u = g.value(t.u).unwrap().data();
    let (x, y, phi) = (
        g.value(t.states.x).unwrap().data(),
        g.value(t.states.y).unwrap().data(),
        g.value(t.states.phi).unwrap().data(),
    );
    let mut states = vec![*x0];
    states.extend((0..x.len()).map(|k| UnicycleState {
        x: x[k],
        y: y[k],
        phi: phi[k],
    }));
    Trajectory {
        states,
        controls: unflatten_controls(u),
        dt,
    }
}

/// Unrolls the dynamics from `x0`; the result has zero equality residual.
pub fn complete(controls: &[UnicycleControl], x0: &UnicycleState, dt: f64) -> Result<Trajectory> {
    if controls.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("controls"));
    }
    if controls.is_empty() {
        return Ok(Trajectory {
            states: vec![*x0],
            controls: Vec::new(),
            dt,
        });
    }
    let mut g = Graph::new();
    let u = g.vector(flatten_controls(controls));
    let t = complete_graph(&mut g, u, x0, dt);
    g.eval()?;
    Ok(read_traj(&g, &t, x0, dt))
}

/// Result of a numeric correction run.
#[derive(Clone, Debug)]
pub struct CorrectionReport {
    pub trajectory: Trajectory,
    /// Penalty of each iterate, `n_grad + 1` entries.
    pub penalties: Vec<f64>,
}

/// Numeric correction of a completed trajectory.
pub fn correct(traj: &Trajectory, set: &ConstraintSet, cfg: &CorrectionConfig) -> Result<Trajectory> {
    Ok(correct_traced(traj, set, cfg)?.trajectory)
}

/// Like [`correct`], also returning the penalty of every iterate.
pub fn correct_traced(traj: &Trajectory, set: &ConstraintSet, cfg: &CorrectionConfig) -> Result<CorrectionReport> {
    traj.validate()?;
    cfg.validate()?;
    let mut g = Graph::new();
    let u = g.vector(traj.controls_flat());
    let states = constant_states(&mut g, &traj.states[1..]);
    let x0 = traj.states[0];
    let out = correct_graph(&mut g, TrajNodes { u, states }, &x0, set, cfg, traj.dt, true)?;
    g.eval()?;
    Ok(CorrectionReport {
        trajectory: read_traj(&g, &out.traj, &x0, traj.dt),
        penalties: out.penalties.iter().map(|&p| g.value(p).unwrap().item()).collect(),
    })
}

/// Squared-norm penalty of a trajectory's own controls and states.
pub fn trajectory_penalty(traj: &Trajectory, set: &ConstraintSet) -> Result<f64> {
    let g = crate::constraints::eval_inequalities(&traj.states, Some(&traj.controls), set, traj.dt)?;
    let alpha = set.alpha(traj.horizon(), true);
    penalty(&g.values, &alpha, true)
}

/// Imitation distance over `k = 1..H` on position and heading (as cosine and
/// sine), with predicted headings given by their cosine and sine nodes.
pub fn distance_loss_cs(
    g: &mut Graph,
    x: NodeId,
    y: NodeId,
    cos: NodeId,
    sin: NodeId,
    gt: &Trajectory,
) -> NodeId {
    let col = |f: &dyn Fn(&UnicycleState) -> f64| Tensor::vector(gt.states[1..].iter().map(f).collect());
    let mut terms = Vec::with_capacity(4);
    for (node, target) in [
        (x, col(&|s| s.x)),
        (y, col(&|s| s.y)),
        (cos, col(&|s| s.phi.cos())),
        (sin, col(&|s| s.phi.sin())),
    ] {
        let t = g.constant(target);
        let d = g.sub(node, t);
        let d2 = g.square(d);
        terms.push(g.sum(d2));
    }
    let a = g.add(terms[0], terms[1]);
    let b = g.add(terms[2], terms[3]);
    g.add(a, b)
}

pub fn distance_loss_graph(g: &mut Graph, states: &StateNodes, gt: &Trajectory) -> NodeId {
    let c = g.cos(states.phi);
    let s = g.sin(states.phi);
    distance_loss_cs(g, states.x, states.y, c, s, gt)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftLossWeights {
    pub lambda_g: f64,
    pub lambda_h: f64,
}

impl Default for SoftLossWeights {
    fn default() -> Self {
        Self {
            lambda_g: 0.5,
            lambda_h: 0.5,
        }
    }
}

impl SoftLossWeights {
    pub const ZERO: Self = Self {
        lambda_g: 0.0,
        lambda_h: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.lambda_g < 0.0 || self.lambda_h < 0.0 || !self.lambda_g.is_finite() || !self.lambda_h.is_finite() {
            return Err(Error::invalid("soft-loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// `d + λ_g ‖ReLU(α ⊙ g)‖ + λ_h ‖h‖`. Terms whose weight is zero (or whose
/// input is absent) are not added to the graph at all.
pub fn soft_loss_graph(
    g: &mut Graph,
    distance: NodeId,
    rows: Option<&RowNodes>,
    h: Option<NodeId>,
    w: &SoftLossWeights,
) -> NodeId {
    let mut total = distance;
    if let (Some(rows), true) = (rows, w.lambda_g > 0.0) {
        let p = penalty_graph(g, rows, false);
        let p = g.scale(p, w.lambda_g);
        total = g.add(total, p);
    }
    if let (Some(h), true) = (h, w.lambda_h > 0.0) {
        let n = g.l2_norm(h);
        let n = g.scale(n, w.lambda_h);
        total = g.add(total, n);
    }
    total
}

fn check_pair(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    check_len("ground-truth states", pred.states.len(), gt.states.len())?;
    pred.validate()?;
    gt.validate()
}

pub fn distance_loss(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut g = Graph::new();
    let s = constant_states(&mut g, &pred.states[1..]);
    let d = distance_loss_graph(&mut g, &s, gt);
    g.eval()?;
    Ok(g.value(d).unwrap().item())
}

/// Numeric soft loss of a predicted trajectory with its own controls.
///
/// In recompleted mode the equality residual vanishes by construction and
/// its term is left out.
pub fn soft_loss(
    pred: &Trajectory,
    gt: &Trajectory,
    set: &ConstraintSet,
    w: &SoftLossWeights,
    mode: CorrectionMode,
) -> Result<f64> {
    check_pair(pred, gt)?;
    w.validate()?;
    let x0 = pred.states[0];
    let mut g = Graph::new();
    let s = constant_states(&mut g, &pred.states[1..]);
    let u = g.vector(pred.controls_flat());
    let d = distance_loss_graph(&mut g, &s, gt);
    let rows = set.rows_graph(&mut g, Some(u), &s, pred.dt);
    let h = (mode == CorrectionMode::Linearized).then(|| residual_graph(&mut g, &s, u, &x0, pred.dt));
    let total = soft_loss_graph(&mut g, d, Some(&rows), h, w);
    g.eval()?;
    Ok(g.value(total).unwrap().item())
}
