use dcil::expert::DwaPlanner;
use dcil::sim::{compute_metrics, rollout_many, spawn_episode, Outcome, RolloutConfig, WorldConfig};

fn main() -> dcil::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let worlds = (0..n)
        .map(|seed| spawn_episode(1_000_000 + seed, &WorldConfig::default()))
        .collect::<dcil::Result<Vec<_>>>()?;
    let cfg = RolloutConfig::default();
    let results = rollout_many(&worlds, &cfg, DwaPlanner::default);
    for r in results.iter().filter(|r| r.outcome != Outcome::Goal) {
        println!("seed {} -> {:?} after {:.1} s", r.seed, r.outcome, r.time);
    }
    let m = compute_metrics(&results, Some(&results))?;
    let mut times: Vec<f64> = results.iter().filter(|r| r.outcome == Outcome::Goal).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    println!("episodes {}  GRR {:.1}%  CR {:.1}%  KCV {}", m.episodes, m.grr, m.cr, m.kcv_count);
    if let Some(t) = times.get(times.len() / 2) {
        println!("median expert time {t:.1} s");
    }
    Ok(())
}
