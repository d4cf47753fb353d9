//! Random 2D worlds with circular obstacles, observation rendering, the
//! closed-loop harness and its metrics.

mod metrics;
mod observe;
mod rollout;
mod world;

pub use metrics::{compute_metrics, MetricReport};
pub use observe::{measurements, render_occupancy, Measurements, GOAL_DISTANCE_SCALE};
pub use rollout::{
    count_violations, rollout_closed_loop, rollout_many, EpisodeResult, Observation, Outcome, Planner,
    RolloutConfig, KCV_TOLERANCE,
};
pub use world::{spawn_episode, World, WorldConfig, MAX_REJECTIONS};
