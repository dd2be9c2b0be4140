//! Policy rules usable on the whole (unbounded) state space.

use rand::{Rng, RngCore};

use crate::envs;
use crate::state::ActionId;

pub use crate::envs::{fixed_path, longest_queue, max_matching};

pub trait PolicyRule: Send + Sync {
    fn name(&self) -> &str;

    /// Deterministic rules ignore `rng`.
    fn decide(&self, q: &[u32], rng: &mut dyn RngCore) -> ActionId;
}

#[derive(Debug, Clone, Copy)]
pub struct LongestQueue;

impl PolicyRule for LongestQueue {
    fn name(&self) -> &str {
        "longest_queue"
    }

    fn decide(&self, q: &[u32], _rng: &mut dyn RngCore) -> ActionId {
        envs::longest_queue(q)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPath;

impl PolicyRule for FixedPath {
    fn name(&self) -> &str {
        "fixed_path"
    }

    fn decide(&self, q: &[u32], _rng: &mut dyn RngCore) -> ActionId {
        envs::fixed_path(q)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxMatching;

impl PolicyRule for MaxMatching {
    fn name(&self) -> &str {
        "max_matching"
    }

    fn decide(&self, q: &[u32], _rng: &mut dyn RngCore) -> ActionId {
        envs::max_matching(q)
    }
}

/// Uniform over `action_count` actions, one draw per decision.
#[derive(Debug, Clone, Copy)]
pub struct UniformRandom {
    pub action_count: usize,
}

impl PolicyRule for UniformRandom {
    fn name(&self) -> &str {
        "uniform_random"
    }

    fn decide(&self, _q: &[u32], rng: &mut dyn RngCore) -> ActionId {
        uniform_random(self.action_count, rng)
    }
}

pub fn uniform_random(action_count: usize, rng: &mut dyn RngCore) -> ActionId {
    debug_assert!(action_count >= 1);
    ActionId(rng.gen_range(0..action_count))
}

/// Looks up a stabilizing rule by its configuration name.
pub fn rule_by_name(name: &str) -> Option<Box<dyn PolicyRule>> {
    match name {
        "longest_queue" => Some(Box::new(LongestQueue)),
        "fixed_path" => Some(Box::new(FixedPath)),
        "max_matching" => Some(Box::new(MaxMatching)),
        _ => None,
    }
}

pub const RULE_NAMES: [&str; 3] = ["longest_queue", "fixed_path", "max_matching"];
