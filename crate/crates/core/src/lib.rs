//! Learned global path planning on occupancy grids.
//!
//! The crate covers the whole offline/online pipeline:
//!
//! * [`gridworld`] generates occupancy grids and labels every free cell with
//!   its exact optimal moves (8-connected breadth-first search from the goal).
//! * [`terrain`] renders synthetic crater scenes with known obstacle masks
//!   and a Canny edge channel.
//! * [`netcore`] is a small CPU tensor/layer library with reverse-mode
//!   gradients, cross-entropy + L2 loss, SGD and a binary checkpoint format.
//! * [`models`] assembles the double-branch CNN and three baselines
//!   (value iteration network, branch-two-only residual net, plain CNN).
//! * [`training`], [`planner`] and [`eval`] cover imitation learning,
//!   greedy rollouts and metrics.

pub mod error;
pub mod eval;
pub mod gridworld;
pub mod models;
pub mod netcore;
pub mod planner;
pub mod terrain;
pub mod training;

pub use error::{Error, Result};
