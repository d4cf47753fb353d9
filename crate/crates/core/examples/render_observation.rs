//! Spawns a random world and prints what the policy sees at the start pose:
//! the egocentric occupancy image as ASCII art and the normalized
//! measurement vector.
//!
//! ```text
//! cargo run --release --example render_observation -- 42
//! ```

use dcil::dynamics::UnicycleControl;
use dcil::policy::NetConfig;
use dcil::sim::{measurements, render_occupancy, spawn_episode, RolloutConfig, WorldConfig};

fn main() -> dcil::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let world = spawn_episode(seed, &WorldConfig::default())?;
    let net = NetConfig::default();
    println!(
        "world {seed}: {} obstacles, start ({:.1}, {:.1}, {:.2} rad), goal ({:.1}, {:.1})",
        world.obstacles.len(),
        world.start.x,
        world.start.y,
        world.start.phi,
        world.goal[0],
        world.goal[1]
    );

    let image = render_occupancy(&world.obstacles, &world.start, &net);
    let size = net.image_size;
    // Rows run from far ahead (top) to behind the robot (bottom).
    for r in 0..size {
        let line: String = (0..size)
            .map(|c| match (image[r * size + c] > 0.5, r == net.anchor_row && c == net.anchor_col()) {
                (_, true) => '@',
                (true, _) => '#',
                _ => '.',
            })
            .collect();
        println!("{line}");
    }

    let m = measurements(&world, &world.start, &UnicycleControl::default());
    println!("measurements {m:?}");
    println!("normalized   {:?}", m.normalized(&RolloutConfig::default().bounds));
    Ok(())
}
