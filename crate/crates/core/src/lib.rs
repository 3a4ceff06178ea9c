//! Trajectory planning through ocean-current fields.
//!
//! A planar vehicle trajectory is optimized as a factor graph (start/goal
//! priors, constant-velocity GP dynamics, obstacle hinges over a signed
//! distance field, and a current-exposure factor) while a spatiotemporal
//! Gaussian-process tracker estimates the current along the trajectory from
//! sparse sensor readings.

// `!(x > 0.0)` style guards reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod factors;
pub mod gp_prior;
pub mod optimizer;
pub mod planner;
pub mod rrt;
pub mod scenario;
pub mod tracker;
pub mod training;
