use dcil_autodiff::{AdamConfig, Graph, ParamStore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::Method;
use crate::dataset::{load_batch, Sample};
use crate::error::{Error, Result};
use crate::policy::PolicyNet;

/// Samples per gradient chunk. Chunks are reduced in a fixed order, so
/// results do not depend on the number of threads.
pub const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps in total (0 = no limit).
    pub max_steps: usize,
    /// Validation samples evaluated after each epoch (0 = all).
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            max_steps: 0,
            val_samples: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn chunk_grads(net: &PolicyNet, method: &Method, samples: &[&Sample]) -> Result<(ParamStore, f64)> {
    let mut acc = net.params.fresh_copy();
    let mut total = 0.0;
    for s in samples {
        let mut g = Graph::new();
        let loss = method.sample_loss(&mut g, net, s)?;
        g.forward(&net.params, &Default::default())?;
        total += g.value(loss).unwrap().item();
        g.backward_into(loss, &mut acc)?;
    }
    Ok((acc, total))
}

/// Mean loss over `samples` without touching gradients.
pub fn mean_loss(net: &PolicyNet, method: &Method, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let loss = method.sample_loss(&mut g, net, s)?;
            g.forward(&net.params, &Default::default())?;
            Ok(g.value(loss).unwrap().item())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One Adam step on the mean loss of `batch`; returns that mean.
pub fn train_step(net: &mut PolicyNet, method: &Method, batch: &[&Sample], adam: &AdamConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let parts: Vec<(ParamStore, f64)> = batch
        .par_chunks(CHUNK)
        .map(|c| chunk_grads(net, method, c))
        .collect::<Result<_>>()?;
    net.params.zero_grad();
    let mut total = 0.0;
    for (p, l) in &parts {
        net.params.add_grads_from(p);
        total += l;
    }
    net.params.scale_grads(1.0 / batch.len() as f64);
    net.params.adam_step(adam)?;
    Ok(total / batch.len() as f64)
}

/// Minibatch Adam over `train`, reporting one line per epoch to `log`.
pub fn train(
    net: &mut PolicyNet,
    method: &Method,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<EpochStats>> {
    method.check_net(net)?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let ids: Vec<usize> = (0..train.len()).collect();
    let val = if cfg.val_samples == 0 { val } else { &val[..cfg.val_samples.min(val.len())] };
    let mut history = Vec::new();
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let batches = load_batch(&ids, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))?;
        let mut sum = 0.0;
        let mut seen = 0;
        for b in &batches {
            if cfg.max_steps > 0 && steps >= cfg.max_steps {
                break;
            }
            let batch: Vec<&Sample> = b.iter().map(|&i| &train[i]).collect();
            sum += train_step(net, method, &batch, &adam)? * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        let stats = EpochStats {
            epoch,
            steps,
            train_loss: if seen == 0 { f64::NAN } else { sum / seen as f64 },
            val_loss: mean_loss(net, method, val)?,
        };
        log(&format!(
            "epoch {} steps {} train_loss {:.6} val_loss {:.6}",
            stats.epoch, stats.steps, stats.train_loss, stats.val_loss
        ));
        history.push(stats);
        if cfg.max_steps > 0 && steps >= cfg.max_steps {
            break;
        }
    }
    Ok(history)
}
