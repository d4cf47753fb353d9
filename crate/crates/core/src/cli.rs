//! The `dcil` command line: `gen-data`, `train`, `eval-open`, `eval-closed`
//! and `report`. Each command is also callable as a function.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{LearnedPlanner, Method, MethodKind, MethodSpec};
use crate::config::RunConfig;
use crate::dataset::{generate, load_manifest, load_split, load_test_worlds, read_jsonl, write_jsonl, DatasetManifest};
use crate::error::{Error, Result};
use crate::eval::{eval_closed, eval_open, expert_references, OpenLoopReport};
use crate::policy::PolicyNet;
use crate::report::{bar_chart, curve_csv, line_chart, metrics_csv, parse_metrics_csv, trajectory_plot};
use crate::sim::{compute_metrics, EpisodeResult, MetricReport, World};
use crate::train::{train, EpochStats};

pub const CHECKPOINT: &str = "model.ckpt";
pub const CURVE: &str = "train_curve.csv";
pub const METRICS: &str = "metrics.csv";
pub const EPISODES: &str = "episodes.jsonl";

#[derive(Debug, Parser)]
#[command(name = "dcil", version, about = "Train and evaluate constrained imitation planners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate expert demonstrations and test worlds.
    GenData(GenDataArgs),
    /// Train one method on a dataset.
    Train(TrainArgs),
    /// Open-loop evaluation on a dataset split.
    EvalOpen(EvalOpenArgs),
    /// Closed-loop evaluation on the unseen test worlds.
    EvalClosed(EvalClosedArgs),
    /// Combine run directories into a CSV table and SVG plots.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted-key override, e.g. `train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (default: number of cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut set = self.set.clone();
        if let Some(s) = self.seed {
            set.push(format!("seed={s}"));
        }
        if let Some(j) = self.jobs {
            set.push(format!("jobs={j}"));
        }
        let cfg = RunConfig::resolve(self.config.as_deref(), &set)?;
        if cfg.jobs > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// il, sl, dkm, dkm_le or dcil.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalOpenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Evaluate as another method sharing the checkpoint (e.g. dkm_le).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalClosedArgs {
    /// Trained checkpoint; omit together with `--expert`.
    #[arg(long, required_unless_present = "expert")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the DWA expert instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub expert: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub method: Option<String>,
    /// Only the first N test worlds.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories containing `metrics.csv` and/or `train_curve.csv`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn progress(cmd: &str, msg: &str) {
    eprintln!("dcil {cmd}: {msg}");
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a).map(|_| ()),
        Command::Train(a) => train_cmd(&a).map(|_| ()),
        Command::EvalOpen(a) => eval_open_cmd(&a).map(|_| ()),
        Command::EvalClosed(a) => eval_closed_cmd(&a).map(|_| ()),
        Command::Report(a) => report_cmd(&a),
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<DatasetManifest> {
    let cfg = a.common.resolve()?;
    cfg.write_snapshot(&a.out)?;
    generate(&cfg.data, &a.out, &mut |m| progress("gen-data", m))
}

/// Metadata stored in every checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub method: MethodKind,
    pub dataset_hash: String,
    pub run: RunConfig,
}

pub fn train_cmd(a: &TrainArgs) -> Result<Vec<EpochStats>> {
    let cfg = a.common.resolve()?;
    let kind = MethodKind::parse(&a.method)?;
    let manifest = load_manifest(&a.data)?;
    let method = Method::new(kind, cfg.method)?;
    cfg.write_snapshot(&a.out)?;
    let train_set = load_split(&a.data, "train")?;
    let val_set = load_split(&a.data, "val")?;
    progress(
        "train",
        &format!("method={} train_samples={} val_samples={}", kind.name(), train_set.len(), val_set.len()),
    );
    let net_cfg = manifest.config.image.clone().with_head(MethodSpec::new(kind).head);
    let mut net = PolicyNet::new(net_cfg, cfg.seed)?;
    let history = train(&mut net, &method, &train_set, &val_set, &cfg.train, &mut |m| progress("train", m))?;
    let info = CheckpointInfo {
        method: kind,
        dataset_hash: manifest.config_hash,
        run: cfg,
    };
    net.save(a.out.join(CHECKPOINT), serde_json::to_value(&info)?)?;
    write(&a.out.join(CURVE), &curve_csv(&history))?;
    progress("train", &format!("wrote {}", a.out.join(CHECKPOINT).display()));
    Ok(history)
}

/// Loads a checkpoint and the method it should be evaluated as.
pub fn load_trained(path: &Path, method: Option<&str>) -> Result<(PolicyNet, Method, CheckpointInfo)> {
    let (net, extra) = PolicyNet::load(path)?;
    let info: CheckpointInfo = serde_json::from_value(extra)?;
    let kind = match method {
        Some(m) => MethodKind::parse(m)?,
        None => info.method,
    };
    if MethodSpec::new(kind).trained_as() != MethodSpec::new(info.method).trained_as() {
        return Err(Error::invalid(format!(
            "checkpoint was trained as {}, cannot evaluate as {}",
            info.method.name(),
            kind.name()
        )));
    }
    let method = Method::new(kind, info.run.method)?;
    Ok((net, method, info))
}

pub fn eval_open_cmd(a: &EvalOpenArgs) -> Result<OpenLoopReport> {
    let (net, method, info) = load_trained(&a.checkpoint, a.method.as_deref())?;
    let samples = load_split(&a.data, &a.split)?;
    progress("eval-open", &format!("method={} samples={}", method.spec.kind.name(), samples.len()));
    let report = eval_open(&net, &method, &samples)?;
    std::fs::create_dir_all(&a.out)?;
    info.run.write_snapshot(&a.out)?;
    write(&a.out.join("open_loop.json"), &serde_json::to_string_pretty(&report)?)?;
    write(
        &a.out.join("open_loop.csv"),
        &format!(
            "method,samples,distance_loss,kinematic_violation_rate,collision_violation_rate,mean_abs_residual,max_abs_residual\n{},{},{:.6},{:.6},{:.6},{:.6e},{:.6e}\n",
            report.method,
            report.samples,
            report.distance_loss,
            report.kinematic_violation_rate,
            report.collision_violation_rate,
            report.mean_abs_residual,
            report.max_abs_residual
        ),
    )?;
    Ok(report)
}

/// One closed-loop episode as stored in `episodes.jsonl`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub world: World,
    pub agent: EpisodeResult,
    pub expert: EpisodeResult,
}

pub fn eval_closed_cmd(a: &EvalClosedArgs) -> Result<MetricReport> {
    let manifest = load_manifest(&a.data)?;
    let mut worlds = load_test_worlds(&a.data)?;
    if let Some(n) = a.episodes {
        worlds.truncate(n);
    }
    let data = &manifest.config;
    let expert = expert_references(&worlds, &data.expert, &data.rollout)?;
    let (name, agent, run) = if a.expert {
        let run = RunConfig {
            seed: data.seed,
            data: data.clone(),
            ..RunConfig::default()
        };
        ("EXPERT".to_string(), expert.clone(), run)
    } else {
        let ckpt = a.checkpoint.as_ref().ok_or_else(|| Error::invalid("--checkpoint is required"))?;
        let (net, method, info) = load_trained(ckpt, a.method.as_deref())?;
        let planner = LearnedPlanner::new(net, method, data.rollout.bounds)?;
        progress(
            "eval-closed",
            &format!("method={} worlds={}", method.spec.kind.name(), worlds.len()),
        );
        let out = eval_closed(&planner, &worlds, &expert, &data.rollout)?;
        (method.spec.kind.name().to_string(), out.agent, info.run)
    };
    let metrics = compute_metrics(&agent, Some(&expert))?;
    std::fs::create_dir_all(&a.out)?;
    run.write_snapshot(&a.out)?;
    write(&a.out.join(METRICS), &metrics_csv(&name, &metrics))?;
    write(&a.out.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
    let traces: Vec<EpisodeTrace> = worlds
        .into_iter()
        .zip(agent)
        .zip(expert)
        .map(|((world, agent), expert)| EpisodeTrace { world, agent, expert })
        .collect();
    write_jsonl(&a.out.join(EPISODES), &traces)?;
    progress(
        "eval-closed",
        &format!(
            "method={name} grr={:.2} cr={:.2} kcv={:.2}% ({})",
            metrics.grr, metrics.cr, metrics.kcv_percent, metrics.kcv_count
        ),
    );
    Ok(metrics)
}

fn run_label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn report_cmd(a: &ReportArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let mut combined = String::from("run,method,metric,value\n");
    let mut kcv_bars = Vec::new();
    let mut curves = Vec::new();
    for dir in &a.runs {
        let label = run_label(dir);
        let metrics = dir.join(METRICS);
        if metrics.exists() {
            for (method, col, val) in parse_metrics_csv(&read(&metrics)?) {
                if col == "kcv_percent" {
                    kcv_bars.push((method.clone(), val.parse().unwrap_or(f64::NAN)));
                }
                combined.push_str(&format!("{label},{method},{col},{val}\n"));
            }
        }
        let curve = dir.join(CURVE);
        if curve.exists() {
            let pts: Vec<(f64, f64)> = read(&curve)?
                .lines()
                .skip(1)
                .filter_map(|l| {
                    let v: Vec<&str> = l.split(',').collect();
                    Some((v.first()?.parse().ok()?, v.get(2)?.parse().ok()?))
                })
                .collect();
            curves.push((label.clone(), pts));
        }
        let episodes = dir.join(EPISODES);
        if episodes.exists() {
            let traces: Vec<EpisodeTrace> = read_jsonl(&episodes)?;
            if let Some(t) = traces.first() {
                let path = |r: &EpisodeResult| r.states.iter().map(|s| [s.x, s.y]).collect::<Vec<_>>();
                let svg = trajectory_plot(
                    &format!("{label}: episode {}", t.world.seed),
                    &t.world.obstacles,
                    t.world.goal,
                    &[("agent".to_string(), path(&t.agent)), ("expert".to_string(), path(&t.expert))],
                );
                write(&a.out.join(format!("trajectory_{label}.svg")), &svg)?;
            }
        }
    }
    write(&a.out.join("combined.csv"), &combined)?;
    if !curves.is_empty() {
        write(
            &a.out.join("training_curves.svg"),
            &line_chart("Training loss", "epoch", "mean train loss", &curves),
        )?;
    }
    if !kcv_bars.is_empty() {
        write(
            &a.out.join("kcv.svg"),
            &bar_chart("Kinematic constraint violations", "KCV (% of steps)", &kcv_bars),
        )?;
    }
    progress("report", &format!("wrote {}", a.out.display()));
    Ok(())
}
