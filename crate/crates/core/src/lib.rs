//! Queueing network control by model-based reinforcement learning on a
//! truncated state space.
//!
//! The crate is organised bottom-up:
//!
//! - [`state`]: backlog vectors, the truncated state space, truncation and the
//!   inner/outer partition.
//! - [`mdp`], [`counts`]: the enumerated finite MDP and the visit/transition
//!   counters the learner accumulates.
//! - [`envs`]: server allocation, two-route routing and the 2x2 input-queued
//!   switch, each with a simulator, an analytic kernel and a stabilizing rule.
//! - [`baselines`]: stabilizing and random policy rules.
//! - [`solvers`]: value iteration, relative value iteration, policy iteration,
//!   average-cost policy evaluation and the c-mu shortcut.
//! - [`rlqn`]: the episodic learner.
//! - [`diagnostics`]: hitting times, boundary mass, sample-count calculator,
//!   episode bound and the known-dynamics reference backlog.

pub mod baselines;
pub mod counts;
pub mod diagnostics;
pub mod envs;
pub mod mdp;
pub mod policy;
pub mod rlqn;
pub mod rng;
pub mod sim;
pub mod solvers;
pub mod state;
pub mod stats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use counts::TransitionCounts;
pub use envs::{EnvConfig, Environment};
pub use mdp::FiniteMdp;
pub use policy::{InnerRegion, PiecewisePolicy};
pub use state::{ActionId, Partition, QueueVector, Region, StateSpace};
