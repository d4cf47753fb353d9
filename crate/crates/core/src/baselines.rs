//! The five compared planners. All share the encoder, the dataset and the
//! closed-loop harness; they differ in the output head, the training loss
//! and where the correction runs.

use dcil_autodiff::{Graph, NodeId};
use serde::{Deserialize, Serialize};

use crate::constrained::{
    complete, complete_graph, correct_graph, correct_traced, distance_loss_cs, distance_loss_graph, soft_loss_graph,
    trajectory_penalty, unflatten_controls, CorrectionConfig, CorrectionMode, SoftLossWeights, TrajNodes, Trajectory,
};
use crate::constraints::{select_obstacles, ConstraintSet, KinematicBounds, OBSTACLE_SLOTS};
use crate::dataset::Sample;
use crate::dynamics::{flatness_controls, flatness_graph, residual_graph, StateNodes, UnicycleState};
use crate::error::{Error, Result};
use crate::policy::{controls_head, predict_controls, predict_states, states_head, HeadKind, PolicyNet};
use crate::sim::{measurements, render_occupancy, Observation, Planner};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Regresses future states directly.
    Il,
    /// State head trained with constraint and consistency penalties.
    Sl,
    /// Control head with completion.
    Dkm,
    /// [`MethodKind::Dkm`] plus correction at test time only.
    DkmLe,
    /// Completion and correction inside training and inference.
    Dcil,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [Self::Il, Self::Sl, Self::Dkm, Self::DkmLe, Self::Dcil];

    pub fn name(self) -> &'static str {
        match self {
            Self::Il => "IL",
            Self::Sl => "SL",
            Self::Dkm => "DKM",
            Self::DkmLe => "DKM<=",
            Self::Dcil => "DCIL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase().replace("<=", "_le").replace('≤', "_le");
        match k.as_str() {
            "il" => Ok(Self::Il),
            "sl" => Ok(Self::Sl),
            "dkm" => Ok(Self::Dkm),
            "dkm_le" | "dkmle" => Ok(Self::DkmLe),
            "dcil" => Ok(Self::Dcil),
            _ => Err(Error::invalid(format!("unknown method `{s}` (expected il, sl, dkm, dkm_le or dcil)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Distance,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub head: HeadKind,
    pub loss: LossKind,
    pub correct_train: bool,
    pub correct_test: bool,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        let (head, loss, correct_train, correct_test) = match kind {
            MethodKind::Il => (HeadKind::States, LossKind::Distance, false, false),
            MethodKind::Sl => (HeadKind::States, LossKind::Soft, false, false),
            MethodKind::Dkm => (HeadKind::Controls, LossKind::Distance, false, false),
            MethodKind::DkmLe => (HeadKind::Controls, LossKind::Distance, false, true),
            MethodKind::Dcil => (HeadKind::Controls, LossKind::Soft, true, true),
        };
        Self {
            kind,
            head,
            loss,
            correct_train,
            correct_test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if *self == Self::new(self.kind) {
            Ok(())
        } else {
            Err(Error::invalid(format!("unsupported combination for {}: {self:?}", self.kind.name())))
        }
    }

    /// The method whose checkpoints this one uses.
    pub fn trained_as(&self) -> MethodKind {
        match self.kind {
            MethodKind::DkmLe => MethodKind::Dkm,
            k => k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub soft: SoftLossWeights,
    pub correction: CorrectionConfig,
    pub dt: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            soft: SoftLossWeights::default(),
            correction: CorrectionConfig::default(),
            dt: 0.3,
        }
    }
}

/// A method with its hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Method {
    pub spec: MethodSpec,
    pub config: MethodConfig,
}

impl Method {
    pub fn new(kind: MethodKind, config: MethodConfig) -> Result<Self> {
        config.soft.validate()?;
        config.correction.validate()?;
        if !(config.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        Ok(Self {
            spec: MethodSpec::new(kind),
            config,
        })
    }

    pub fn check_net(&self, net: &PolicyNet) -> Result<()> {
        if net.config.head == self.spec.head {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} needs a {:?} head, the network has {:?}",
                self.spec.kind.name(),
                self.spec.head,
                net.config.head
            )))
        }
    }

    /// Adds the training loss of one sample to `g` and returns it.
    pub fn sample_loss(&self, g: &mut Graph, net: &PolicyNet, sample: &Sample) -> Result<NodeId> {
        self.check_net(net)?;
        let raw = net.build(g, &sample.image.decode(), &sample.measurements)?.raw;
        self.loss_from_raw(g, raw, &sample.set, &sample.gt)
    }

    /// Training loss given the network output node.
    pub fn loss_from_raw(&self, g: &mut Graph, raw: NodeId, set: &ConstraintSet, gt: &Trajectory) -> Result<NodeId> {
        let x0 = gt.states[0];
        let dt = self.config.dt;
        let w = &self.config.soft;
        match self.spec.head {
            HeadKind::States => {
                let sh = states_head(g, raw);
                let d = distance_loss_cs(g, sh.x, sh.y, sh.cos, sh.sin, gt);
                if self.spec.loss == LossKind::Distance || (w.lambda_g == 0.0 && w.lambda_h == 0.0) {
                    return Ok(d);
                }
                let phi = g.atan2(sh.sin, sh.cos);
                let states = StateNodes {
                    x: sh.x,
                    y: sh.y,
                    phi,
                };
                let (u, h) = flatness_graph(g, &states, &x0, dt);
                let rows = (w.lambda_g > 0.0).then(|| set.rows_graph(g, Some(u), &states, dt));
                Ok(soft_loss_graph(g, d, rows.as_ref(), Some(h), w))
            }
            HeadKind::Controls => {
                let u = controls_head(g, raw, &set.bounds);
                let mut traj = complete_graph(g, u, &x0, dt);
                if self.spec.correct_train {
                    traj = correct_graph(g, traj, &x0, set, &self.config.correction, dt, false)?.traj;
                }
                let d = distance_loss_graph(g, &traj.states, gt);
                if self.spec.loss == LossKind::Distance {
                    return Ok(d);
                }
                Ok(self.soft_terms(g, d, traj, &x0, set))
            }
        }
    }

    fn soft_terms(&self, g: &mut Graph, d: NodeId, traj: TrajNodes, x0: &UnicycleState, set: &ConstraintSet) -> NodeId {
        let w = &self.config.soft;
        let dt = self.config.dt;
        let rows = (w.lambda_g > 0.0).then(|| set.rows_graph(g, Some(traj.u), &traj.states, dt));
        let linear = self.spec.correct_train && self.config.correction.mode == CorrectionMode::Linearized;
        let h = (w.lambda_h > 0.0 && linear).then(|| residual_graph(g, &traj.states, traj.u, x0, dt));
        soft_loss_graph(g, d, rows.as_ref(), h, w)
    }

    /// Planned trajectory from the origin for one observation.
    pub fn plan(&self, net: &PolicyNet, image: &[f64], meas: &[f64], set: &ConstraintSet) -> Result<Trajectory> {
        self.check_net(net)?;
        let raw = net.forward(image, meas)?;
        self.plan_from_raw(&raw, set)
    }

    pub fn plan_from_raw(&self, raw: &[f64], set: &ConstraintSet) -> Result<Trajectory> {
        let dt = self.config.dt;
        let x0 = UnicycleState::default();
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        match self.spec.head {
            HeadKind::States => {
                let mut states = vec![x0];
                states.extend(predict_states(raw, &x0));
                let controls = flatness_controls(&states, dt)?;
                Ok(Trajectory { states, controls, dt })
            }
            HeadKind::Controls => {
                let u = unflatten_controls(&predict_controls(raw, &set.bounds));
                let traj = complete(&u, &x0, dt)?;
                if self.spec.correct_test {
                    Ok(correct_traced(&traj, set, &self.config.correction)?.trajectory)
                } else {
                    Ok(traj)
                }
            }
        }
    }
}

/// Result of [`dcil_infer`].
#[derive(Clone, Debug)]
pub struct Inference {
    pub completed: Trajectory,
    pub corrected: Trajectory,
    pub penalty_before: f64,
    pub penalty_after: f64,
}

/// DCIL inference with the correction trace exposed: network, completion,
/// correction.
pub fn dcil_infer(
    net: &PolicyNet,
    config: &MethodConfig,
    image: &[f64],
    meas: &[f64],
    set: &ConstraintSet,
) -> Result<Inference> {
    let m = Method::new(MethodKind::Dcil, *config)?;
    m.check_net(net)?;
    let raw = net.forward(image, meas)?;
    let u = unflatten_controls(&predict_controls(&raw, &set.bounds));
    let completed = complete(&u, &UnicycleState::default(), config.dt)?;
    let report = correct_traced(&completed, set, &config.correction)?;
    let penalty_after = trajectory_penalty(&report.trajectory, set)?;
    Ok(Inference {
        penalty_before: report.penalties[0],
        penalty_after,
        completed,
        corrected: report.trajectory,
    })
}

/// A trained method driving the closed-loop harness.
#[derive(Clone, Debug)]
pub struct LearnedPlanner {
    pub net: PolicyNet,
    pub method: Method,
    pub bounds: KinematicBounds,
}

impl LearnedPlanner {
    pub fn new(net: PolicyNet, method: Method, bounds: KinematicBounds) -> Result<Self> {
        method.check_net(&net)?;
        Ok(Self { net, method, bounds })
    }

    /// The constraint set a sample at `obs` would carry.
    pub fn constraint_set(&self, obs: &Observation<'_>) -> ConstraintSet {
        ConstraintSet {
            bounds: self.bounds,
            ..ConstraintSet::mobile_robot(obs.control, select_obstacles(&obs.world.obstacles, &obs.state, OBSTACLE_SLOTS))
        }
    }
}

impl Planner for LearnedPlanner {
    fn plan(&mut self, obs: &Observation<'_>) -> Result<Vec<UnicycleState>> {
        let image = render_occupancy(&obs.world.obstacles, &obs.state, &self.net.config);
        let meas = measurements(obs.world, &obs.state, &obs.control).normalized(&self.bounds);
        let set = self.constraint_set(obs);
        let traj = self.method.plan(&self.net, &image, &meas, &set)?;
        Ok(traj.states[1..].to_vec())
    }
}
