//! Dynamic Window Approach expert.
//!
//! Candidates are scored against a look-ahead point taken from a grid
//! navigation function of the world rather than against the raw goal
//! bearing, so the expert does not stall in front of obstacles that sit
//! between it and the goal.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::constraints::{Interval, KinematicBounds};
use crate::dynamics::{unicycle_step, UnicycleControl, UnicycleState};
use crate::error::{Error, Result};
use crate::sim::{Observation, Planner, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwaConfig {
    pub bounds: KinematicBounds,
    /// Samples over `v` and `ω` inside the window.
    pub grid: [usize; 2],
    /// Length of each constant-control rollout in seconds.
    pub horizon: f64,
    pub w_heading: f64,
    pub w_clearance: f64,
    pub w_velocity: f64,
    /// Clearance above which no extra reward is given.
    pub clearance_saturation: f64,
    pub dt: f64,
    /// Navigation grid resolution in metres.
    pub nav_cell: f64,
    /// How far along the navigation path the heading target lies.
    pub lookahead: f64,
}

impl Default for DwaConfig {
    fn default() -> Self {
        Self {
            bounds: KinematicBounds::default(),
            grid: [11, 21],
            horizon: 2.0,
            w_heading: 1.0,
            w_clearance: 0.4,
            w_velocity: 0.3,
            clearance_saturation: 2.0,
            dt: 0.3,
            nav_cell: 0.25,
            lookahead: 2.0,
        }
    }
}

impl DwaConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.grid[0] < 2 || self.grid[1] < 2 {
            return Err(Error::invalid("DWA grid must be at least 2x2"));
        }
        if !(self.w_heading > 0.0 && self.w_clearance > 0.0 && self.w_velocity > 0.0) {
            return Err(Error::invalid("DWA weights must be positive"));
        }
        if !(self.horizon > 0.0 && self.dt > 0.0 && self.clearance_saturation > 0.0 && self.nav_cell > 0.0) {
            return Err(Error::invalid("DWA horizon, dt and saturation must be positive"));
        }
        Ok(())
    }

    pub fn rollout_steps(&self) -> usize {
        (self.horizon / self.dt).ceil() as usize
    }

    /// Controls reachable from `current` in one step and inside the boxes.
    pub fn window(&self, current: &UnicycleControl) -> (Interval, Interval) {
        let b = &self.bounds;
        let reach = |x: f64, rate: Interval, boxed: Interval| {
            let lo = (x + rate.lo * self.dt).max(boxed.lo);
            let hi = (x + rate.hi * self.dt).min(boxed.hi);
            if lo <= hi {
                Interval::new(lo, hi)
            } else {
                let c = boxed.clamp(x);
                Interval::new(c, c)
            }
        };
        (reach(current.v, b.accel, b.v), reach(current.omega, b.omega_dot, b.omega))
    }

    /// Score of one candidate, or `None` if its rollout collides or it
    /// cannot stop before the nearest obstacle.
    pub fn score(&self, world: &World, nav: &NavField, state: &UnicycleState, u: &UnicycleControl) -> Option<f64> {
        let mut s = *state;
        let mut clearance = f64::INFINITY;
        for _ in 0..self.rollout_steps() {
            s = unicycle_step(&s, u, self.dt).ok()?;
            let c = world.clearance(s.x, s.y);
            if c <= 0.0 {
                return None;
            }
            clearance = clearance.min(c);
        }
        let decel = self.bounds.accel.lo.abs().min(self.bounds.accel.hi.abs());
        if clearance.is_finite() && u.v.abs() > (2.0 * decel * clearance).sqrt() {
            return None;
        }
        let target = nav.lookahead(s.x, s.y, self.lookahead);
        let (lx, ly) = s.to_local(target[0], target[1]);
        let bearing = if lx == 0.0 && ly == 0.0 { 0.0 } else { ly.atan2(lx) };
        let heading = 1.0 - bearing.abs() / std::f64::consts::PI;
        let clear = clearance.min(self.clearance_saturation) / self.clearance_saturation;
        let velocity = u.v / self.bounds.v.hi;
        Some(self.w_heading * heading + self.w_clearance * clear + self.w_velocity * velocity)
    }

    /// The best admissible control, or the braking fallback when none is.
    pub fn plan(&self, world: &World, nav: &NavField, state: &UnicycleState, current: &UnicycleControl) -> UnicycleControl {
        let (wv, ww) = self.window(current);
        let lerp = |i: Interval, k: usize, n: usize| i.lo + i.width() * k as f64 / (n - 1) as f64;
        let [nv, nw] = self.grid;
        let mut best: Option<(f64, UnicycleControl)> = None;
        for i in 0..nv {
            for j in 0..nw {
                let u = UnicycleControl::new(lerp(wv, i, nv), lerp(ww, j, nw));
                let Some(score) = self.score(world, nav, state, &u) else {
                    continue;
                };
                let better = match best {
                    None => true,
                    Some((b, bu)) => score > b || (score == b && u.omega.abs() < bu.omega.abs()),
                };
                if better {
                    best = Some((score, u));
                }
            }
        }
        best.map_or_else(|| self.brake(current), |(_, u)| u)
    }

    /// Moves both speeds towards zero as fast as the window allows.
    pub fn brake(&self, current: &UnicycleControl) -> UnicycleControl {
        let (wv, ww) = self.window(current);
        UnicycleControl::new(wv.clamp(0.0), ww.clamp(0.0))
    }
}

/// One DWA decision, building the navigation field from scratch.
pub fn dwa_plan(cfg: &DwaConfig, world: &World, state: &UnicycleState, current: &UnicycleControl) -> UnicycleControl {
    cfg.plan(world, &NavField::new(world, cfg.nav_cell), state, current)
}

/// Obstacle-aware travel distance to the goal on a regular grid.
///
/// Cells whose centre is within `robot_radius` of an obstacle are not
/// forbidden but cost [`NavField::BLOCKED_COST`] times their length, so
/// every cell gets a finite value and a robot already touching an obstacle
/// is still led away from it.
#[derive(Clone, Debug)]
pub struct NavField {
    origin: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    dist: Vec<f64>,
    goal: [f64; 2],
}

impl NavField {
    pub const BLOCKED_COST: f64 = 50.0;
    /// Extra grid around the workspace.
    pub const BORDER: f64 = 5.0;

    pub fn new(world: &World, cell: f64) -> Self {
        let origin = [-Self::BORDER, -Self::BORDER];
        let n = ((world.size + 2.0 * Self::BORDER) / cell).ceil() as usize + 1;
        let (cols, rows) = (n, n);
        let cost: Vec<f64> = (0..rows * cols)
            .map(|i| {
                let (x, y) = (origin[0] + (i % cols) as f64 * cell, origin[1] + (i / cols) as f64 * cell);
                let c = world.clearance(x, y);
                if c <= 0.0 {
                    Self::BLOCKED_COST
                } else {
                    1.0 + 2.0 * (1.0 - c).max(0.0)
                }
            })
            .collect();
        let mut field = Self {
            origin,
            cell,
            cols,
            rows,
            dist: vec![f64::INFINITY; rows * cols],
            goal: world.goal,
        };
        let start = field.index(world.goal[0], world.goal[1]);
        let mut heap = BinaryHeap::new();
        field.dist[start] = 0.0;
        heap.push((Reverse(OrdF64(0.0)), start));
        while let Some((Reverse(OrdF64(d)), i)) = heap.pop() {
            if d > field.dist[i] {
                continue;
            }
            let next: Vec<(usize, f64)> = field.neighbours(i).collect();
            for (j, len) in next {
                let nd = d + len * cell * 0.5 * (cost[i] + cost[j]);
                if nd < field.dist[j] {
                    field.dist[j] = nd;
                    heap.push((Reverse(OrdF64(nd)), j));
                }
            }
        }
        field
    }

    fn index(&self, x: f64, y: f64) -> usize {
        let c = (((x - self.origin[0]) / self.cell).round().max(0.0) as usize).min(self.cols - 1);
        let r = (((y - self.origin[1]) / self.cell).round().max(0.0) as usize).min(self.rows - 1);
        r * self.cols + c
    }

    fn centre(&self, i: usize) -> [f64; 2] {
        [
            self.origin[0] + (i % self.cols) as f64 * self.cell,
            self.origin[1] + (i / self.cols) as f64 * self.cell,
        ]
    }

    fn neighbours(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (r, c) = ((i / self.cols) as isize, (i % self.cols) as isize);
        (-1..=1isize).flat_map(move |dr| {
            (-1..=1isize).filter_map(move |dc| {
                let (nr, nc) = (r + dr, c + dc);
                let inside = (dr, dc) != (0, 0)
                    && nr >= 0
                    && nc >= 0
                    && (nr as usize) < self.rows
                    && (nc as usize) < self.cols;
                inside.then(|| (nr as usize * self.cols + nc as usize, ((dr * dr + dc * dc) as f64).sqrt()))
            })
        })
    }

    /// Travel cost from the cell containing `(x, y)` to the goal.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.dist[self.index(x, y)]
    }

    /// The point reached by steepest descent from `(x, y)` after `distance`
    /// metres of grid path, or the goal if it comes first.
    pub fn lookahead(&self, x: f64, y: f64, distance: f64) -> [f64; 2] {
        if (self.goal[0] - x).hypot(self.goal[1] - y) <= distance {
            return self.goal;
        }
        let mut i = self.index(x, y);
        let mut travelled = 0.0;
        while travelled < distance {
            let Some((j, len)) = self
                .neighbours(i)
                .min_by(|a, b| self.dist[a.0].total_cmp(&self.dist[b.0]))
                .filter(|(j, _)| self.dist[*j] < self.dist[i])
            else {
                return self.goal;
            };
            i = j;
            travelled += len * self.cell;
        }
        self.centre(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// [`DwaConfig`] as a closed-loop planner. The navigation field is built
/// once per world.
#[derive(Clone, Debug, Default)]
pub struct DwaPlanner {
    pub config: DwaConfig,
    nav: Option<(u64, [f64; 2], NavField)>,
}

impl DwaPlanner {
    pub fn new(config: DwaConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, nav: None })
    }

    pub fn decide(&mut self, world: &World, state: &UnicycleState, current: &UnicycleControl) -> UnicycleControl {
        let stale = !matches!(&self.nav, Some((seed, goal, _)) if *seed == world.seed && *goal == world.goal);
        if stale {
            self.nav = Some((world.seed, world.goal, NavField::new(world, self.config.nav_cell)));
        }
        let nav = &self.nav.as_ref().unwrap().2;
        self.config.plan(world, nav, state, current)
    }
}

impl Planner for DwaPlanner {
    fn plan(&mut self, obs: &Observation<'_>) -> Result<Vec<UnicycleState>> {
        let u = self.decide(obs.world, &obs.state, &obs.control);
        Ok(vec![unicycle_step(&UnicycleState::default(), &u, self.config.dt)?])
    }
}
