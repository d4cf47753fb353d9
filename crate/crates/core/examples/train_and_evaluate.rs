//! End to end at toy scale: expert demonstrations, training of several
//! methods on the same data, and a closed-loop comparison table.
//!
//! ```text
//! cargo run --release --example train_and_evaluate -- [episodes] [epochs] [methods]
//! cargo run --release --example train_and_evaluate -- 40 2 il,dkm,dcil
//! ```

use dcil::baselines::{LearnedPlanner, Method, MethodConfig, MethodKind, MethodSpec};
use dcil::dataset::{generate, load_split, load_test_worlds, DataConfig};
use dcil::eval::{eval_closed, eval_open, expert_references};
use dcil::policy::PolicyNet;
use dcil::report::{fmt_num, METRIC_HEADER};
use dcil::train::{train, TrainConfig};

fn main() -> dcil::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let kinds = args
        .next()
        .unwrap_or_else(|| "il,dcil".into())
        .split(',')
        .map(MethodKind::parse)
        .collect::<dcil::Result<Vec<_>>>()?;

    let cfg = DataConfig {
        episodes,
        test_worlds: 5,
        ..Default::default()
    };
    let dir = std::env::temp_dir().join(format!("dcil-example-{}", std::process::id()));
    let manifest = generate(&cfg, &dir, &mut |m| eprintln!("{m}"))?;
    println!("{} samples from {} episodes in {}", manifest.samples, manifest.episodes, dir.display());

    let train_set = load_split(&dir, "train")?;
    let val_set = load_split(&dir, "val")?;
    let test_set = load_split(&dir, "test")?;
    let worlds = load_test_worlds(&dir)?;
    let expert = expert_references(&worlds, &cfg.expert, &cfg.rollout)?;

    let mut table = vec![format!("{METRIC_HEADER},open_loop_distance")];
    for kind in kinds {
        let method = Method::new(kind, MethodConfig::default())?;
        let mut net = PolicyNet::new(cfg.image.clone().with_head(MethodSpec::new(kind).head), 1)?;
        let tc = TrainConfig {
            epochs,
            ..Default::default()
        };
        train(&mut net, &method, &train_set, &val_set, &tc, &mut |m| eprintln!("{}: {m}", kind.name()))?;
        let open = eval_open(&net, &method, &test_set)?;
        let planner = LearnedPlanner::new(net, method, cfg.rollout.bounds)?;
        let closed = eval_closed(&planner, &worlds, &expert, &cfg.rollout)?;
        table.push(format!(
            "{},{}",
            dcil::report::metric_row(kind.name(), &closed.metrics),
            fmt_num(Some(open.distance_loss))
        ));
    }
    println!("{}", table.join("\n"));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
