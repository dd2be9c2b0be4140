//! Exact solvers for finite cost-minimizing MDPs.
//!
//! Every solver uses Jacobi sweeps (each sweep reads only the previous
//! iterate) and breaks argmin ties towards the lowest action index.

mod cmu;
mod evaluation;
mod policy_iteration;
mod relative_value_iteration;
mod value_iteration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::FiniteMdp;
use crate::state::ActionId;

pub use cmu::{cmu_solve, service_rates_from_counts, CmuRule};
pub use evaluation::{gain_and_bias, policy_evaluation_average, stationary_distribution};
pub use policy_iteration::{evaluate_discounted, policy_iteration};
pub use relative_value_iteration::{relative_value_iteration, relative_value_iteration_from, APERIODICITY_MIX};
pub use value_iteration::{value_iteration, value_iteration_observed};

pub const DEFAULT_DISCOUNT: f64 = 0.99;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Largest state count solved with a dense LU factorization; bigger systems
/// fall back to iterative methods.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("model is multichain: per-state gains differ by {spread:e} after {iterations} iterations")]
    Multichain {
        spread: f64,
        iterations: usize,
        /// Greedy policy when the stall was detected.
        policy: Vec<ActionId>,
    },
    #[error("singular policy-evaluation system")]
    Singular,
    #[error("induced chain has {classes} closed classes; {} states lie outside the first", unreachable.len())]
    Reducible { classes: usize, unreachable: Vec<usize> },
    #[error("policy covers {got} states, MDP has {expected}")]
    PolicyShape { expected: usize, got: usize },
    #[error("discount {0} is outside (0, 1)")]
    BadDiscount(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub policy: Vec<ActionId>,
    /// Discounted values, or the bias vector for average-cost solves.
    pub values: Vec<f64>,
    /// Average cost, for average-cost solves.
    pub gain: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Which solver an exploitation episode runs on the estimated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverChoice {
    Rvi {
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    Vi {
        #[serde(default = "default_discount")]
        discount: f64,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    Pi {
        #[serde(default = "default_discount")]
        discount: f64,
        #[serde(default = "default_pi_rounds")]
        max_iter: usize,
    },
    /// Serve the nonempty node with the largest estimated service rate.
    /// Only meaningful for server allocation.
    Cmu,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

fn default_discount() -> f64 {
    DEFAULT_DISCOUNT
}

fn default_pi_rounds() -> usize {
    10_000
}

impl Default for SolverChoice {
    fn default() -> Self {
        SolverChoice::Rvi {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl SolverChoice {
    pub fn label(&self) -> &'static str {
        match self {
            SolverChoice::Rvi { .. } => "rvi",
            SolverChoice::Vi { .. } => "vi",
            SolverChoice::Pi { .. } => "pi",
            SolverChoice::Cmu => "cmu",
        }
    }

    /// Runs the chosen table solver. `warm` seeds the iterate of RVI and VI.
    /// Panics for [`SolverChoice::Cmu`], which needs counts, not a kernel.
    pub fn solve(&self, mdp: &FiniteMdp, warm: Option<&[f64]>) -> Result<SolveResult, SolveError> {
        match *self {
            SolverChoice::Rvi { tol, max_iter } => relative_value_iteration_from(mdp, tol, max_iter, warm),
            SolverChoice::Vi {
                discount,
                tol,
                max_iter,
            } => value_iteration_observed(mdp, discount, tol, max_iter, warm, |_, _| {}),
            SolverChoice::Pi { discount, max_iter } => policy_iteration(mdp, discount, max_iter),
            SolverChoice::Cmu => panic!("the c-mu rule is built from counts, not from a kernel"),
        }
    }
}

/// Absolute slack under which two action values count as tied.
#[inline]
pub(crate) fn tie_slack(best: f64) -> f64 {
    1e-10 * best.abs().max(1.0)
}

/// `(argmin, min)` of `score(a)` over `0..actions`, lowest index on ties.
#[inline]
pub(crate) fn argmin_actions(actions: usize, mut score: impl FnMut(usize) -> f64) -> (usize, f64) {
    let mut best = 0;
    let mut best_value = score(0);
    for a in 1..actions {
        let v = score(a);
        if v < best_value - tie_slack(best_value) {
            best = a;
            best_value = v;
        }
    }
    (best, best_value)
}

pub(crate) fn check_discount(discount: f64) -> Result<(), SolveError> {
    if discount > 0.0 && discount < 1.0 {
        Ok(())
    } else {
        Err(SolveError::BadDiscount(discount))
    }
}
