//! Demonstration datasets: expert episodes sliced into fixed-horizon
//! samples, stored as JSON Lines with run-length-encoded images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constrained::Trajectory;
use crate::constraints::{select_obstacles, ConstraintSet, OBSTACLE_SLOTS};
use crate::dynamics::UnicycleState;
use crate::error::{Error, Result};
use crate::expert::{DwaConfig, DwaPlanner};
use crate::policy::{NetConfig, MEASUREMENT_DIM};
use crate::sim::{
    measurements, render_occupancy, rollout_closed_loop, spawn_episode, EpisodeResult, Outcome, RolloutConfig,
    World, WorldConfig,
};

pub const FORMAT_VERSION: u32 = 1;
/// Offset separating closed-loop test world seeds from training seeds.
pub const TEST_SEED_OFFSET: u64 = 1 << 40;

/// A square binary image stored as alternating run lengths, starting with a
/// run of zeros.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupancy {
    pub size: usize,
    pub runs: Vec<u32>,
}

impl Occupancy {
    pub fn encode(image: &[f64], size: usize) -> Result<Self> {
        if image.len() != size * size {
            return Err(Error::Length {
                what: "occupancy image",
                expected: size * size,
                got: image.len(),
            });
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &p in image {
            let bit = match p {
                x if x == 0.0 => false,
                x if x == 1.0 => true,
                _ => return Err(Error::invalid(format!("occupancy pixel {p} is not 0 or 1"))),
            };
            if bit != current {
                runs.push(len);
                current = bit;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        Ok(Self { size, runs })
    }

    pub fn decode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size * self.size);
        for (i, &n) in self.runs.iter().enumerate() {
            let v = if i % 2 == 0 { 0.0 } else { 1.0 };
            out.extend(std::iter::repeat(v).take(n as usize));
        }
        out
    }
}

/// One training example in the robot frame of `pose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub episode: usize,
    pub step: usize,
    /// World-frame pose at the sample time.
    pub pose: UnicycleState,
    pub image: Occupancy,
    /// Normalised network measurements.
    pub measurements: [f64; MEASUREMENT_DIM],
    pub set: ConstraintSet,
    /// Expert future starting at the origin: `H + 1` states, `H` controls.
    pub gt: Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub episodes: usize,
    pub test_worlds: usize,
    pub seed: u64,
    pub horizon: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Give up once this many expert episodes have been discarded.
    pub max_discarded: usize,
    pub world: WorldConfig,
    pub expert: DwaConfig,
    pub rollout: RolloutConfig,
    pub image: NetConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            test_worlds: 20,
            seed: 0,
            horizon: 10,
            split: [0.834, 0.083, 0.083],
            max_discarded: 100,
            world: WorldConfig::default(),
            expert: DwaConfig::default(),
            rollout: RolloutConfig::default(),
            image: NetConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.expert.validate()?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|&r| r < 0.0) || (sum - 1.0).abs() > 1e-2 {
            return Err(Error::invalid(format!("split ratios must be non-negative and sum to 1, got {sum}")));
        }
        if self.expert.dt != self.rollout.dt {
            return Err(Error::invalid("expert and rollout dt differ"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_world_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_mul(1 << 20).wrapping_add(index as u64)
    }

    pub fn test_world_seed(&self, index: usize) -> u64 {
        self.train_world_seed(index).wrapping_add(TEST_SEED_OFFSET)
    }
}

/// Cuts an expert episode into samples. Steps without `H` future controls
/// are dropped, so an episode with `T + 1` states yields `T + 1 - H`
/// samples.
pub fn slice_episode(
    episode: usize,
    world: &World,
    result: &EpisodeResult,
    horizon: usize,
    image: &NetConfig,
    rollout: &RolloutConfig,
) -> Result<Vec<Sample>> {
    let n = result.states.len();
    if n <= horizon {
        return Ok(Vec::new());
    }
    (0..n - horizon)
        .map(|t| {
            let pose = result.states[t];
            let prev = if t == 0 { Default::default() } else { result.controls[t - 1] };
            let states = result.states[t..=t + horizon].iter().map(|s| s.relative_to(&pose)).collect();
            let gt = Trajectory {
                states,
                controls: result.controls[t..t + horizon].to_vec(),
                dt: rollout.dt,
            };
            let img = render_occupancy(&world.obstacles, &pose, image);
            Ok(Sample {
                episode,
                step: t,
                pose,
                image: Occupancy::encode(&img, image.image_size)?,
                measurements: measurements(world, &pose, &prev).normalized(&rollout.bounds),
                set: ConstraintSet {
                    bounds: rollout.bounds,
                    ..ConstraintSet::mobile_robot(prev, select_obstacles(&world.obstacles, &pose, OBSTACLE_SLOTS))
                },
                gt,
            })
        })
        .collect()
}

/// Worlds the expert solves, drawn in seed order, and the number of
/// worlds discarded on the way.
pub fn expert_worlds(
    count: usize,
    seed_of: impl Fn(usize) -> u64 + Sync,
    cfg: &DataConfig,
) -> Result<(Vec<(World, EpisodeResult)>, usize)> {
    let mut kept = Vec::with_capacity(count);
    let mut discarded = 0;
    let mut next = 0;
    while kept.len() < count {
        let batch: Vec<usize> = (next..next + (count - kept.len())).collect();
        next += batch.len();
        let runs: Vec<Result<(World, EpisodeResult)>> = batch
            .par_iter()
            .map(|&i| {
                let world = spawn_episode(seed_of(i), &cfg.world)?;
                let mut expert = DwaPlanner::new(cfg.expert.clone())?;
                let result = rollout_closed_loop(&mut expert, &world, &cfg.rollout);
                Ok((world, result))
            })
            .collect();
        for run in runs {
            let (world, result) = run?;
            if result.outcome == Outcome::Goal {
                kept.push((world, result));
            } else {
                discarded += 1;
                if discarded > cfg.max_discarded {
                    return Err(Error::ExpertBudget(format!(
                        "{discarded} expert episodes failed (last: world seed {}, {:?})",
                        world.seed, result.outcome
                    )));
                }
            }
        }
    }
    Ok((kept, discarded))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub episodes: usize,
    pub samples: usize,
    pub split_ratios: [f64; 3],
    pub split_episodes: SplitCounts,
    pub split_samples: SplitCounts,
    pub seed: u64,
    pub train_world_seeds: Vec<u64>,
    pub test_world_seeds: Vec<u64>,
    pub discarded_expert_episodes: usize,
    pub config_hash: String,
    pub config: DataConfig,
}

/// Episode indices per split. Validation and test sizes are rounded to
/// the nearest integer and the remainder goes to training.
pub fn split_indices(episodes: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let n_val = (ratios[1] * episodes as f64).round() as usize;
    let n_test = (ratios[2] * episodes as f64).round() as usize;
    if episodes < 3 || n_val + n_test >= episodes {
        return Err(Error::invalid(format!("cannot split {episodes} episodes into three parts")));
    }
    let mut ids: Vec<usize> = (0..episodes).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids.split_off(episodes - n_test);
    let val = ids.split_off(ids.len() - n_val);
    let mut parts = [ids, val, test];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok(parts)
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Config {
            path: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Generates expert episodes and test worlds and writes the dataset into
/// `dir`. Progress lines go to `log`.
pub fn generate(cfg: &DataConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    log(&format!("generating {} expert episodes", cfg.episodes));
    let (train, discarded) = expert_worlds(cfg.episodes, |i| cfg.train_world_seed(i), cfg)?;
    log(&format!("generating {} test worlds", cfg.test_worlds));
    let (test, _) = expert_worlds(cfg.test_worlds, |i| cfg.test_world_seed(i), cfg)?;
    let sliced: Vec<Vec<Sample>> = train
        .par_iter()
        .enumerate()
        .map(|(e, (w, r))| slice_episode(e, w, r, cfg.horizon, &cfg.image, &cfg.rollout))
        .collect::<Result<_>>()?;
    let parts = split_indices(cfg.episodes, cfg.split, cfg.seed)?;
    let mut sample_counts = [0usize; 3];
    for (k, ids) in parts.iter().enumerate() {
        let samples: Vec<&Sample> = ids.iter().flat_map(|&e| &sliced[e]).collect();
        sample_counts[k] = samples.len();
        write_jsonl(&dir.join(format!("{}.jsonl", SPLIT_NAMES[k])), &samples)?;
    }
    let worlds: Vec<&World> = test.iter().map(|(w, _)| w).collect();
    write_jsonl(&dir.join("worlds_test.jsonl"), &worlds)?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        episodes: cfg.episodes,
        samples: sample_counts.iter().sum(),
        split_ratios: cfg.split,
        split_episodes: SplitCounts {
            train: parts[0].len(),
            val: parts[1].len(),
            test: parts[2].len(),
        },
        split_samples: SplitCounts {
            train: sample_counts[0],
            val: sample_counts[1],
            test: sample_counts[2],
        },
        seed: cfg.seed,
        train_world_seeds: train.iter().map(|(w, _)| w.seed).collect(),
        test_world_seeds: test.iter().map(|(w, _)| w.seed).collect(),
        discarded_expert_episodes: discarded,
        config_hash: cfg.hash(),
        config: cfg.clone(),
    };
    let mut w = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    log(&format!("wrote {} samples to {}", manifest.samples, dir.display()));
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_reader(open(&dir.join("manifest.json"))?)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "dataset format version {} is not supported (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}

pub fn load_split(dir: &Path, split: &str) -> Result<Vec<Sample>> {
    if !SPLIT_NAMES.contains(&split) {
        return Err(Error::invalid(format!("unknown split `{split}`")));
    }
    load_manifest(dir)?;
    read_jsonl(&dir.join(format!("{split}.jsonl")))
}

pub fn load_test_worlds(dir: &Path) -> Result<Vec<World>> {
    load_manifest(dir)?;
    read_jsonl(&dir.join("worlds_test.jsonl"))
}

/// Shuffled minibatches of `indices`; the last batch may be short.
pub fn load_batch(indices: &[usize], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut ids = indices.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ids.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
