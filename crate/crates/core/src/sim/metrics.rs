use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::sim::{EpisodeResult, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub episodes: usize,
    /// Goal-reaching rate in percent.
    pub grr: f64,
    /// Collision rate in percent.
    pub cr: f64,
    /// Mean agent time relative to the expert, in percent, over episodes
    /// where both reached the goal. `None` when there are no such episodes
    /// or no expert references were given.
    pub time: Option<f64>,
    pub kcv_count: usize,
    pub kcv_steps: usize,
    /// `kcv_count` over all applied-control steps, in percent.
    pub kcv_percent: f64,
}

pub fn compute_metrics(results: &[EpisodeResult], expert: Option<&[EpisodeResult]>) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::invalid("no episodes to evaluate"));
    }
    if let Some(e) = expert {
        check_len("expert references", results.len(), e.len())?;
    }
    let n = results.len() as f64;
    let count = |o: Outcome| results.iter().filter(|r| r.outcome == o).count() as f64;
    let ratios: Vec<f64> = expert
        .into_iter()
        .flat_map(|e| results.iter().zip(e))
        .filter(|(a, e)| a.outcome == Outcome::Goal && e.outcome == Outcome::Goal && e.time > 0.0)
        .map(|(a, e)| a.time / e.time * 100.0)
        .collect();
    let kcv_count: usize = results.iter().map(|r| r.kcv).sum();
    let kcv_steps: usize = results.iter().map(EpisodeResult::steps).sum();
    Ok(MetricReport {
        episodes: results.len(),
        grr: count(Outcome::Goal) / n * 100.0,
        cr: count(Outcome::Collision) / n * 100.0,
        time: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        kcv_count,
        kcv_steps,
        kcv_percent: if kcv_steps == 0 {
            0.0
        } else {
            kcv_count as f64 / kcv_steps as f64 * 100.0
        },
    })
}
