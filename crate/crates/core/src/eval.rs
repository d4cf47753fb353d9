use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{LearnedPlanner, Method};
use crate::constrained::distance_loss;
use crate::constraints::{eval_inequalities, RowKind};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::expert::{DwaConfig, DwaPlanner};
use crate::policy::PolicyNet;
use crate::sim::{compute_metrics, rollout_many, EpisodeResult, MetricReport, RolloutConfig, World, KCV_TOLERANCE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub method: String,
    pub samples: usize,
    pub distance_loss: f64,
    /// Fraction of samples with any kinematic row above the tolerance.
    pub kinematic_violation_rate: f64,
    /// Fraction of samples with any obstacle row above the tolerance.
    pub collision_violation_rate: f64,
    pub mean_abs_residual: f64,
    pub max_abs_residual: f64,
}

struct SampleEval {
    distance: f64,
    kinematic: bool,
    collision: bool,
    residual_sum: f64,
    residual_max: f64,
    residual_len: usize,
}

/// Plans every sample and compares against its expert future.
pub fn eval_open(net: &PolicyNet, method: &Method, samples: &[Sample]) -> Result<OpenLoopReport> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let evals: Vec<SampleEval> = samples
        .par_iter()
        .map(|s| {
            let plan = method.plan(net, &s.image.decode(), &s.measurements, &s.set)?;
            let g = eval_inequalities(&plan.states, Some(&plan.controls), &s.set, plan.dt)?;
            let bad = |pred: fn(RowKind) -> bool| {
                g.values
                    .iter()
                    .zip(&g.labels)
                    .any(|(v, l)| pred(l.kind) && *v > KCV_TOLERANCE)
            };
            let h = plan.equality_residual()?;
            Ok(SampleEval {
                distance: distance_loss(&plan, &s.gt)?,
                kinematic: bad(RowKind::is_kinematic),
                collision: bad(|k| k == RowKind::Obstacle),
                residual_sum: h.iter().map(|x| x.abs()).sum(),
                residual_max: h.iter().fold(0.0, |m, x| m.max(x.abs())),
                residual_len: h.len(),
            })
        })
        .collect::<Result<_>>()?;
    let n = evals.len() as f64;
    let frac = |f: fn(&SampleEval) -> bool| evals.iter().filter(|e| f(e)).count() as f64 / n;
    Ok(OpenLoopReport {
        method: method.spec.kind.name().to_string(),
        samples: evals.len(),
        distance_loss: evals.iter().map(|e| e.distance).sum::<f64>() / n,
        kinematic_violation_rate: frac(|e| e.kinematic),
        collision_violation_rate: frac(|e| e.collision),
        mean_abs_residual: evals.iter().map(|e| e.residual_sum).sum::<f64>()
            / evals.iter().map(|e| e.residual_len).sum::<usize>().max(1) as f64,
        max_abs_residual: evals.iter().fold(0.0, |m, e| m.max(e.residual_max)),
    })
}

/// Closed-loop runs of a learned planner and of the expert on the same
/// worlds.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub agent: Vec<EpisodeResult>,
    pub expert: Vec<EpisodeResult>,
    pub metrics: MetricReport,
}

pub fn expert_references(worlds: &[World], expert: &DwaConfig, rollout: &RolloutConfig) -> Result<Vec<EpisodeResult>> {
    let planner = DwaPlanner::new(expert.clone())?;
    Ok(rollout_many(worlds, rollout, || planner.clone()))
}

pub fn eval_closed(
    planner: &LearnedPlanner,
    worlds: &[World],
    expert: &[EpisodeResult],
    rollout: &RolloutConfig,
) -> Result<ClosedLoop> {
    let agent = rollout_many(worlds, rollout, || planner.clone());
    let metrics = compute_metrics(&agent, Some(expert))?;
    Ok(ClosedLoop {
        agent,
        expert: expert.to_vec(),
        metrics,
    })
}
