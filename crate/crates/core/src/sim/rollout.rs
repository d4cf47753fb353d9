use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::KinematicBounds;
use crate::dynamics::{flatness_controls, unicycle_step, UnicycleControl, UnicycleState};
use crate::error::{Error, Result};
use crate::sim::World;

/// Tolerance used when counting kinematic violations.
pub const KCV_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub dt: f64,
    /// Episode time limit in seconds.
    pub timeout: f64,
    pub bounds: KinematicBounds,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            dt: 0.3,
            timeout: 60.0,
            bounds: KinematicBounds::default(),
        }
    }
}

impl RolloutConfig {
    pub fn max_steps(&self) -> usize {
        (self.timeout / self.dt).round() as usize
    }
}

/// Everything a planner may look at in one control cycle.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub world: &'a World,
    pub state: UnicycleState,
    /// The control applied in the previous cycle (zero at the start).
    pub control: UnicycleControl,
    pub step: usize,
}

/// Anything that maps an observation to future poses `x_1..x_H` expressed
/// in the robot frame of the current pose.
pub trait Planner {
    fn plan(&mut self, obs: &Observation<'_>) -> Result<Vec<UnicycleState>>;
}

impl<P: Planner + ?Sized> Planner for Box<P> {
    fn plan(&mut self, obs: &Observation<'_>) -> Result<Vec<UnicycleState>> {
        (**self).plan(obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    Collision,
    Timeout,
    /// The planner returned an error or a non-finite trajectory.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub outcome: Outcome,
    /// Time to reach the goal, or elapsed time at termination.
    pub time: f64,
    pub states: Vec<UnicycleState>,
    pub controls: Vec<UnicycleControl>,
    /// Applied controls violating a kinematic box by more than
    /// [`KCV_TOLERANCE`].
    pub kcv: usize,
}

impl EpisodeResult {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }
}

/// Number of controls in `controls` outside a box, with rates taken against
/// the preceding control (zero before the first).
pub fn count_violations(controls: &[UnicycleControl], bounds: &KinematicBounds, dt: f64) -> usize {
    let mut prev = UnicycleControl::default();
    controls
        .iter()
        .filter(|u| {
            let bad = bounds.violated(u, &prev, dt, KCV_TOLERANCE);
            prev = **u;
            bad
        })
        .count()
}

/// Runs one episode: plan, apply the first flatness control, repeat.
pub fn rollout_closed_loop<P: Planner + ?Sized>(
    planner: &mut P,
    world: &World,
    cfg: &RolloutConfig,
) -> EpisodeResult {
    let mut state = world.start;
    let mut control = UnicycleControl::default();
    let mut states = vec![state];
    let mut controls = Vec::new();
    let mut outcome = Outcome::Timeout;
    for step in 0..cfg.max_steps() {
        if world.at_goal(state.x, state.y) {
            outcome = Outcome::Goal;
            break;
        }
        let obs = Observation {
            world,
            state,
            control,
            step,
        };
        let next = planner.plan(&obs).and_then(|traj| {
            let first = *traj.first().ok_or(Error::NonFinite("empty plan"))?;
            let u = flatness_controls(&[UnicycleState::default(), first], cfg.dt)?[0];
            let s = unicycle_step(&state, &u, cfg.dt)?;
            Ok((u, s))
        });
        let Ok((u, s)) = next else {
            outcome = Outcome::Failed;
            break;
        };
        control = u;
        state = s;
        states.push(state);
        controls.push(control);
        if world.clearance(state.x, state.y) < 0.0 {
            outcome = Outcome::Collision;
            break;
        }
    }
    if outcome == Outcome::Timeout && world.at_goal(state.x, state.y) {
        outcome = Outcome::Goal;
    }
    EpisodeResult {
        seed: world.seed,
        outcome,
        time: controls.len() as f64 * cfg.dt,
        kcv: count_violations(&controls, &cfg.bounds, cfg.dt),
        states,
        controls,
    }
}

/// Runs every world with a fresh planner from `make`; results keep the
/// order of `worlds`.
pub fn rollout_many<P, F>(worlds: &[World], cfg: &RolloutConfig, make: F) -> Vec<EpisodeResult>
where
    P: Planner,
    F: Fn() -> P + Sync,
{
    worlds
        .par_iter()
        .map(|w| rollout_closed_loop(&mut make(), w, cfg))
        .collect()
}
