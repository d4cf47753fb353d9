use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::Interval;
use crate::dynamics::UnicycleState;
use crate::error::{Error, Result};
use crate::geometry::Circle;

/// Rejection budget for placing a valid start and goal.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Side length of the square workspace in metres.
    pub size: f64,
    /// Inclusive range of the obstacle count.
    pub obstacles: [usize; 2],
    pub obstacle_radius: Interval,
    pub min_start_goal: f64,
    /// Free space required around the robot body at the start and goal.
    pub margin: f64,
    pub goal_radius: f64,
    pub robot_radius: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            size: 30.0,
            obstacles: [4, 12],
            obstacle_radius: Interval::new(0.1, 3.0),
            min_start_goal: 5.0,
            margin: 1.0,
            goal_radius: 0.5,
            robot_radius: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.obstacles[0] > self.obstacles[1] {
            return Err(Error::invalid("obstacle count range is empty"));
        }
        if !(self.obstacle_radius.lo > 0.0 && self.obstacle_radius.lo <= self.obstacle_radius.hi) {
            return Err(Error::invalid("obstacle radius range is invalid"));
        }
        if !(self.size > 2.0 * self.obstacle_radius.hi) {
            return Err(Error::invalid("workspace too small for the obstacle radii"));
        }
        if !(self.goal_radius > 0.0 && self.robot_radius > 0.0 && self.margin >= 0.0) {
            return Err(Error::invalid("radii must be positive and the margin non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub size: f64,
    pub obstacles: Vec<Circle>,
    pub start: UnicycleState,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub robot_radius: f64,
}

impl World {
    /// Distance from the robot body at `(x, y)` to the nearest obstacle;
    /// negative when overlapping, infinite in an empty world.
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance(x, y) - self.robot_radius)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn goal_distance(&self, x: f64, y: f64) -> f64 {
        (self.goal[0] - x).hypot(self.goal[1] - y)
    }

    pub fn at_goal(&self, x: f64, y: f64) -> bool {
        self.goal_distance(x, y) < self.goal_radius
    }
}

/// Draws a random world. The result depends only on `seed` and `config`.
pub fn spawn_episode(seed: u64, config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(config.obstacles[0]..=config.obstacles[1]);
    let r = config.obstacle_radius;
    let obstacles: Vec<Circle> = (0..n)
        .map(|_| {
            let radius = rng.gen_range(r.lo..=r.hi);
            Circle::new(
                rng.gen_range(radius..=config.size - radius),
                rng.gen_range(radius..=config.size - radius),
                radius,
            )
        })
        .collect();
    let mut world = World {
        seed,
        size: config.size,
        obstacles,
        start: UnicycleState::default(),
        goal: [0.0; 2],
        goal_radius: config.goal_radius,
        robot_radius: config.robot_radius,
    };
    let edge = config.robot_radius + config.margin;
    for _ in 0..MAX_REJECTIONS {
        let s = [rng.gen_range(edge..config.size - edge), rng.gen_range(edge..config.size - edge)];
        let goal = [rng.gen_range(edge..config.size - edge), rng.gen_range(edge..config.size - edge)];
        let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let far = (goal[0] - s[0]).hypot(goal[1] - s[1]) >= config.min_start_goal;
        if far && world.clearance(s[0], s[1]) >= config.margin && world.clearance(goal[0], goal[1]) >= config.margin {
            world.start = UnicycleState::new(s[0], s[1], phi);
            world.goal = goal;
            return Ok(world);
        }
    }
    Err(Error::Spawn {
        seed,
        rejections: MAX_REJECTIONS,
    })
}
