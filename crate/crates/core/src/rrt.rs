//! RRT* over a signed distance field, used only to seed the optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{SignedDistanceField, Vec2};
use crate::gp_prior::{GpError, SupportState, Trajectory};

#[derive(Debug, Error)]
pub enum RrtError {
    #[error("start {0:?} is in collision")]
    StartInCollision([f64; 2]),
    #[error("goal {0:?} is in collision")]
    GoalInCollision([f64; 2]),
    #[error("no path found within {0} iterations")]
    NoPath(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrtParams {
    pub max_iterations: usize,
    /// Steer step in meters.
    pub step: f64,
    pub goal_bias: f64,
    /// Rewire-ball constant; derived from the free area when unset.
    pub gamma: Option<f64>,
    pub goal_tolerance: f64,
    /// Collision margin in meters; one cell when unset.
    pub clearance: Option<f64>,
    pub seed: u64,
}

impl Default for RrtParams {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            step: 50.0,
            goal_bias: 0.05,
            gamma: None,
            goal_tolerance: 10.0,
            clearance: None,
            seed: 0,
        }
    }
}

impl RrtParams {
    pub fn validate(&self) -> Result<(), RrtError> {
        let ok = self.step > 0.0
            && (0.0..=1.0).contains(&self.goal_bias)
            && self.goal_tolerance >= 0.0
            && self.gamma.is_none_or(|g| g > 0.0)
            && self.clearance.is_none_or(|c| c >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(RrtError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Vec2>,
    /// Total Euclidean length (meters).
    pub cost: f64,
}

impl Path {
    pub fn new(waypoints: Vec<Vec2>) -> Self {
        let cost = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        Self { waypoints, cost }
    }
}

struct Node {
    pos: Vec2,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

/// `2 (1 + 1/d)^(1/d) (A_free / ζ_d)^(1/d)` for `d = 2`, `ζ_2 = π`.
pub fn rewire_gamma(sdf: &SignedDistanceField) -> f64 {
    let f = sdf.frame();
    let free = sdf.values().iter().filter(|&&v| v > 0.0).count() as f64;
    let area = free * f.cell_size * f.cell_size;
    2.0 * 1.5f64.sqrt() * (area / std::f64::consts::PI).sqrt()
}

pub fn plan(sdf: &SignedDistanceField, start: Vec2, goal: Vec2, params: &RrtParams) -> Result<Path, RrtError> {
    params.validate()?;
    let frame = sdf.frame();
    let clearance = params.clearance.unwrap_or(frame.cell_size);
    let spacing = frame.cell_size * 0.5;
    if sdf.distance(&start) <= clearance {
        return Err(RrtError::StartInCollision([start.x, start.y]));
    }
    if sdf.distance(&goal) <= clearance {
        return Err(RrtError::GoalInCollision([goal.x, goal.y]));
    }
    if start == goal {
        return Ok(Path::new(vec![start]));
    }
    let gamma = params.gamma.unwrap_or_else(|| rewire_gamma(sdf));
    let (lo, hi) = frame.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let clear = |a: &Vec2, b: &Vec2| sdf.segment_clear(a, b, clearance, spacing);

    let mut nodes = vec![Node {
        pos: start,
        parent: None,
        cost: 0.0,
        children: Vec::new(),
    }];
    for _ in 0..params.max_iterations {
        let sample = if rng.random::<f64>() < params.goal_bias {
            goal
        } else {
            Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y))
        };
        let nearest = nearest_node(&nodes, &sample);
        let from = nodes[nearest].pos;
        let d = (sample - from).norm();
        if d == 0.0 {
            continue;
        }
        let new_pos = if d > params.step {
            from + (sample - from) * (params.step / d)
        } else {
            sample
        };
        if !clear(&from, &new_pos) {
            continue;
        }
        let n = nodes.len() as f64 + 1.0;
        let radius = (gamma * (n.ln() / n).sqrt()).min(params.step);
        let near: Vec<usize> = (0..nodes.len())
            .filter(|&i| (nodes[i].pos - new_pos).norm() <= radius)
            .collect();

        let mut parent = nearest;
        let mut best = nodes[nearest].cost + (new_pos - from).norm();
        for &i in &near {
            let c = nodes[i].cost + (nodes[i].pos - new_pos).norm();
            if c < best && i != nearest && clear(&nodes[i].pos, &new_pos) {
                parent = i;
                best = c;
            }
        }
        let id = nodes.len();
        nodes.push(Node {
            pos: new_pos,
            parent: Some(parent),
            cost: best,
            children: Vec::new(),
        });
        nodes[parent].children.push(id);

        for &i in &near {
            if i == parent {
                continue;
            }
            let c = best + (nodes[i].pos - new_pos).norm();
            if c < nodes[i].cost && clear(&new_pos, &nodes[i].pos) {
                let old = nodes[i].parent.expect("only the root has no parent and it never improves");
                nodes[old].children.retain(|&k| k != i);
                nodes[i].parent = Some(id);
                nodes[id].children.push(i);
                let delta = nodes[i].cost - c;
                propagate(&mut nodes, i, delta);
            }
        }
    }

    // best node that reaches the goal, counting the final hop when it is clear
    let mut best: Option<(usize, f64, bool)> = None;
    for (i, node) in nodes.iter().enumerate() {
        let to_goal = (goal - node.pos).norm();
        if to_goal > params.goal_tolerance.max(params.step) {
            continue;
        }
        let (total, hop) = if to_goal == 0.0 {
            (node.cost, false)
        } else if clear(&node.pos, &goal) {
            (node.cost + to_goal, true)
        } else if to_goal <= params.goal_tolerance {
            (node.cost, false)
        } else {
            continue;
        };
        if best.is_none_or(|(_, c, _)| total < c) {
            best = Some((i, total, hop));
        }
    }
    let (mut i, _, hop) = best.ok_or(RrtError::NoPath(params.max_iterations))?;
    let mut waypoints = vec![nodes[i].pos];
    while let Some(p) = nodes[i].parent {
        waypoints.push(nodes[p].pos);
        i = p;
    }
    waypoints.reverse();
    if hop {
        waypoints.push(goal);
    }
    Ok(Path::new(waypoints))
}

fn nearest_node(nodes: &[Node], p: &Vec2) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, n) in nodes.iter().enumerate() {
        let d = (n.pos - p).norm_squared();
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// Lowers the cost of `root` and its whole subtree by `delta`.
fn propagate(nodes: &mut [Node], root: usize, delta: f64) {
    let mut stack = vec![root];
    while let Some(k) = stack.pop() {
        nodes[k].cost -= delta;
        stack.extend(nodes[k].children.iter().copied());
    }
}

/// Resamples the path at uniform arc length into `n_support` states spread
/// evenly over `total_time`, with finite-difference velocities (central
/// inside, one-sided at the ends).
pub fn path_to_trajectory(path: &Path, n_support: usize, total_time: f64, start_time: f64) -> Result<Trajectory, RrtError> {
    if path.waypoints.is_empty() {
        return Err(RrtError::InvalidParams("empty path".into()));
    }
    if n_support < 2 || !(total_time > 0.0) {
        return Err(RrtError::InvalidParams(format!(
            "n_support = {n_support}, total_time = {total_time}"
        )));
    }
    let w = &path.waypoints;
    let mut cum = vec![0.0];
    for s in w.windows(2) {
        cum.push(cum.last().unwrap() + (s[1] - s[0]).norm());
    }
    let total_len = *cum.last().unwrap();
    let at = |s: f64| -> Vec2 {
        if w.len() == 1 || total_len == 0.0 {
            return w[0];
        }
        let s = s.clamp(0.0, total_len);
        let k = match cum.iter().position(|&c| c >= s) {
            Some(0) => 1,
            Some(k) => k,
            None => w.len() - 1,
        };
        let seg = cum[k] - cum[k - 1];
        if seg == 0.0 {
            return w[k];
        }
        let u = (s - cum[k - 1]) / seg;
        w[k - 1] + (w[k] - w[k - 1]) * u
    };
    let positions: Vec<Vec2> = (0..n_support)
        .map(|i| at(total_len * i as f64 / (n_support - 1) as f64))
        .collect();
    let dt = total_time / (n_support - 1) as f64;
    let states = (0..n_support)
        .map(|i| {
            let v = if i == 0 {
                (positions[1] - positions[0]) / dt
            } else if i + 1 == n_support {
                (positions[i] - positions[i - 1]) / dt
            } else {
                (positions[i + 1] - positions[i - 1]) / (2.0 * dt)
            };
            SupportState::new(start_time + dt * i as f64, positions[i], v)
        })
        .collect();
    Ok(Trajectory::new(states)?)
}
