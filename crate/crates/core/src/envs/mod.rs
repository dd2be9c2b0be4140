//! Benchmark queueing environments behind one contract.
//!
//! Every environment changes each backlog coordinate by at most one packet per
//! slot, and given the current state and action the coordinates move
//! independently. That lets one description, the per-coordinate law of the
//! change in `{-1, 0, +1}`, drive the analytic kernel and the reachable sets,
//! while [`Environment::step_in_place`] simulates the slot directly from its
//! Bernoulli draws.

mod routing;
mod server_allocation;
mod switch;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{FiniteMdp, MdpError};
use crate::state::{ActionId, QueueVector, StateError, StateSpace};

pub use routing::{fixed_path, Routing, RoutingConfig, VIA_1, VIA_2};
pub use server_allocation::{longest_queue, ServerAllocation, ServerAllocationConfig};
pub use switch::{max_matching, Switch, SwitchConfig, CROSSED, PARALLEL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("{what} = {value} is outside [0, 1]")]
    RateOutOfRange { what: String, value: f64 },
    #[error("server allocation needs matching lambda and p lengths, got {lambda} and {p}")]
    LengthMismatch { lambda: usize, p: usize },
    #[error("server allocation needs at least one node")]
    NoNodes,
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// `[P(-1), P(0), P(+1)]` for one coordinate's change over a slot.
pub type CoordinateLaw = [f64; 3];

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;

    fn queue_count(&self) -> usize;

    fn action_count(&self) -> usize;

    fn action_label(&self, action: ActionId) -> String;

    /// Per-queue, per-slot change bound `W`.
    fn max_change(&self) -> u32 {
        1
    }

    /// Law of each coordinate's change from `q` under `action`.
    fn coordinate_laws(&self, q: &[u32], action: ActionId) -> Vec<CoordinateLaw>;

    /// Simulates one slot on the unbounded state space.
    fn step_in_place(&self, q: &mut [u32], action: ActionId, rng: &mut dyn RngCore);

    /// The known stabilizing rule `pi_0`.
    fn stabilizing_action(&self, q: &[u32]) -> ActionId;

    /// Load conditions that are violated, as human-readable warnings.
    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

pub fn step(env: &dyn Environment, q: &QueueVector, action: ActionId, rng: &mut dyn RngCore) -> QueueVector {
    let mut next = q.clone();
    env.step_in_place(next.as_mut_slice(), action, rng);
    next
}

/// Exact next-state distribution on the unbounded space, ascending by vector.
pub fn transitions(env: &dyn Environment, q: &QueueVector, action: ActionId) -> Vec<(QueueVector, f64)> {
    let laws = env.coordinate_laws(q.as_slice(), action);
    let mut out = vec![(q.clone(), 1.0)];
    for (i, law) in laws.iter().enumerate() {
        let mut grown = Vec::with_capacity(out.len() * 3);
        for (base, p) in &out {
            for (k, &pk) in law.iter().enumerate() {
                if pk == 0.0 {
                    continue;
                }
                let mut v = base.clone();
                let x = i64::from(v[i]) + k as i64 - 1;
                debug_assert!(x >= 0, "law allows a departure from an empty queue");
                v.as_mut_slice()[i] = x as u32;
                grown.push((v, p * pk));
            }
        }
        out = grown;
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Every state one slot away from `q` under some action, ascending.
pub fn reachable(env: &dyn Environment, q: &QueueVector) -> Vec<QueueVector> {
    let mut out: Vec<QueueVector> = (0..env.action_count())
        .flat_map(|a| transitions(env, q, ActionId(a)).into_iter().map(|(v, _)| v))
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Walks the product of per-coordinate laws, emitting `(truncated id, prob)`.
fn for_each_truncated_outcome(
    space: &StateSpace,
    q: &[u32],
    laws: &[CoordinateLaw],
    mut emit: impl FnMut(usize, f64),
) {
    fn recurse(
        i: usize,
        id: usize,
        p: f64,
        q: &[u32],
        laws: &[CoordinateLaw],
        base: usize,
        u: u32,
        emit: &mut dyn FnMut(usize, f64),
    ) {
        if i == q.len() {
            emit(id, p);
            return;
        }
        for (k, &pk) in laws[i].iter().enumerate() {
            if pk == 0.0 {
                continue;
            }
            let x = (i64::from(q[i]) + k as i64 - 1).max(0) as u32;
            recurse(i + 1, id * base + x.min(u) as usize, p * pk, q, laws, base, u, emit);
        }
    }
    let base = space.threshold() as usize + 1;
    recurse(0, 0, 1.0, q, laws, base, space.threshold(), &mut emit);
}

/// Analytic kernel of the `U`-truncated system: every outcome of a slot is
/// passed through `min(U, .)` and equal results are merged. Cost is total
/// backlog.
pub fn true_kernel(env: &dyn Environment, threshold: u32, cap: usize) -> Result<FiniteMdp, EnvError> {
    let space = StateSpace::new(env.queue_count(), threshold, cap)?;
    let actions = env.action_count();
    let mut rows = Vec::with_capacity(space.size() * actions);
    let mut cost = Vec::with_capacity(space.size());
    let mut q = vec![0u32; space.queues()];
    for s in 0..space.size() {
        space.write_vector(s, &mut q);
        cost.push(q.iter().map(|&x| f64::from(x)).sum());
        for a in 0..actions {
            let laws = env.coordinate_laws(&q, ActionId(a));
            let mut row = Vec::new();
            for_each_truncated_outcome(&space, &q, &laws, |id, p| row.push((id, p)));
            rows.push(row);
        }
    }
    Ok(FiniteMdp::new(space.size(), actions, rows, cost)?.with_space(space))
}

/// For each truncated state, the truncated ids reachable in one slot under
/// any action, ascending. These are the supports used for unvisited pairs.
pub fn truncated_reachable(env: &dyn Environment, space: &StateSpace) -> Vec<Vec<usize>> {
    let mut q = vec![0u32; space.queues()];
    (0..space.size())
        .map(|s| {
            space.write_vector(s, &mut q);
            let mut ids = Vec::new();
            for a in 0..env.action_count() {
                let laws = env.coordinate_laws(&q, ActionId(a));
                for_each_truncated_outcome(space, &q, &laws, |id, _| ids.push(id));
            }
            ids.sort_unstable();
            ids.dedup();
            ids
        })
        .collect()
}

fn check_rate(what: impl Into<String>, value: f64) -> Result<(), EnvError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(EnvError::RateOutOfRange {
            what: what.into(),
            value,
        })
    }
}

pub(crate) fn bernoulli(rng: &mut dyn RngCore, p: f64) -> bool {
    use rand::Rng;
    rng.gen::<f64>() < p
}

/// Environment description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    ServerAllocation { lambda: Vec<f64>, p: Vec<f64> },
    Routing {
        lambda: f64,
        #[serde(default = "default_routing_threshold")]
        threshold: u32,
        #[serde(default = "default_rates_low")]
        rates_low: (f64, f64),
        #[serde(default = "default_rates_high")]
        rates_high: (f64, f64),
    },
    Switch { lambda_matrix: [[f64; 2]; 2] },
}

fn default_routing_threshold() -> u32 {
    5
}

fn default_rates_low() -> (f64, f64) {
    (0.9, 0.1)
}

fn default_rates_high() -> (f64, f64) {
    (0.1, 0.9)
}

impl EnvConfig {
    /// Two nodes, `lambda = (0.3, 0.2)`, `p = (0.9, 0.6)`.
    pub fn two_node_default() -> Self {
        EnvConfig::ServerAllocation {
            lambda: vec![0.3, 0.2],
            p: vec![0.9, 0.6],
        }
    }

    /// Ten nodes, `lambda_i = 0.05`, `p_i` evenly spaced over `[0.55, 1.0]`.
    pub fn ten_node_default() -> Self {
        EnvConfig::ServerAllocation {
            lambda: vec![0.05; 10],
            p: (0..10).map(|i| 0.55 + 0.05 * i as f64).collect(),
        }
    }

    pub fn routing_default() -> Self {
        EnvConfig::Routing {
            lambda: 0.85,
            threshold: 5,
            rates_low: default_rates_low(),
            rates_high: default_rates_high(),
        }
    }

    pub fn switch_asymmetric() -> Self {
        EnvConfig::Switch {
            lambda_matrix: [[0.4, 0.4], [0.2, 0.1]],
        }
    }

    pub fn switch_heavy() -> Self {
        EnvConfig::Switch {
            lambda_matrix: [[0.49, 0.49], [0.49, 0.49]],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EnvConfig::ServerAllocation { .. } => "server_allocation",
            EnvConfig::Routing { .. } => "routing",
            EnvConfig::Switch { .. } => "switch",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>, EnvError> {
        Ok(match self {
            EnvConfig::ServerAllocation { lambda, p } => Box::new(ServerAllocation::new(
                ServerAllocationConfig {
                    lambda: lambda.clone(),
                    p: p.clone(),
                },
            )?),
            EnvConfig::Routing {
                lambda,
                threshold,
                rates_low,
                rates_high,
            } => Box::new(Routing::new(RoutingConfig {
                lambda: *lambda,
                threshold: *threshold,
                rates_low: *rates_low,
                rates_high: *rates_high,
            })?),
            EnvConfig::Switch { lambda_matrix } => Box::new(Switch::new(SwitchConfig {
                lambda: *lambda_matrix,
            })?),
        })
    }
}
