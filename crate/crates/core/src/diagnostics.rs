//! Empirical probes: hitting times, boundary mass, the sample-count
//! calculator, the episode-count bound and the known-dynamics reference.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{true_kernel, EnvError, Environment};
use crate::policy::PiecewisePolicy;
use crate::rng::{stream, SimRng};
use crate::sim::{backlog_summary, simulate};
use crate::solvers::{SolveError, SolveResult, SolverChoice};
use crate::state::{truncate_in_place, ActionId, Partition, StateError, StateSpace, DEFAULT_STATE_CAP};
use crate::stats::{bootstrap_mean, mean_and_stderr, ols_slope, BlockAccumulator, Interval, DEFAULT_BLOCKS, DEFAULT_RESAMPLES};

/// Per-pair slot cap for hitting-time samples.
pub const HITTING_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingRow {
    pub l1_distance: u64,
    pub mean_hitting_time: f64,
    pub std_error: f64,
    pub sample_count: u64,
    /// Samples that hit the cap; excluded from the mean.
    pub capped: u64,
}

impl HittingRow {
    /// Every sample at this distance hit the cap.
    pub fn unreliable(&self) -> bool {
        self.sample_count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HittingProfile {
    /// Ascending in distance.
    pub rows: Vec<HittingRow>,
}

/// First hitting time from `from` to `to` on the truncated chain, or `None`
/// past `cap` slots.
pub fn hitting_time<D>(
    env: &dyn Environment,
    threshold: u32,
    from: &[u32],
    to: &[u32],
    cap: u64,
    rng: &mut dyn RngCore,
    mut decide: D,
) -> Option<u64>
where
    D: FnMut(&[u32], &mut dyn RngCore) -> ActionId,
{
    let mut q = from.to_vec();
    for t in 0..cap {
        if q == to {
            return Some(t);
        }
        let a = decide(&q, rng);
        env.step_in_place(&mut q, a, rng);
        truncate_in_place(&mut q, threshold);
    }
    (q == to).then_some(cap)
}

/// Samples `pair_samples` ordered pairs uniformly from the truncated space
/// and buckets their hitting times by L1 distance. Pair `i` draws from
/// stream `(seed, "hitting", i)`.
pub fn hitting_time_profile<D>(
    env: &dyn Environment,
    threshold: u32,
    pair_samples: usize,
    cap: u64,
    seed: u64,
    mut decide: D,
) -> Result<HittingProfile, DiagnosticsError>
where
    D: FnMut(&[u32], &mut dyn RngCore) -> ActionId,
{
    if pair_samples == 0 {
        return Err(DiagnosticsError::Invalid("pair_samples must be at least 1".into()));
    }
    let space = StateSpace::new(env.queue_count(), threshold, DEFAULT_STATE_CAP)?;
    let mut buckets: BTreeMap<u64, (Vec<f64>, u64)> = BTreeMap::new();
    for i in 0..pair_samples {
        let mut rng: SimRng = stream(seed, "hitting", i as u64);
        let from = space.vector(rng.gen_range(0..space.size()));
        let to = space.vector(rng.gen_range(0..space.size()));
        let d = from.l1_distance(&to);
        let entry = buckets.entry(d).or_default();
        match hitting_time(env, threshold, from.as_slice(), to.as_slice(), cap, &mut rng, &mut decide) {
            Some(t) => entry.0.push(t as f64),
            None => entry.1 += 1,
        }
    }
    let rows = buckets
        .into_iter()
        .map(|(d, (times, capped))| {
            let (mean, se) = if times.is_empty() { (f64::NAN, f64::NAN) } else { mean_and_stderr(&times) };
            HittingRow {
                l1_distance: d,
                mean_hitting_time: mean,
                std_error: se,
                sample_count: times.len() as u64,
                capped,
            }
        })
        .collect();
    Ok(HittingProfile { rows })
}

/// Solves the true truncated kernel and wraps the result as the piecewise
/// policy (learned on the inner region, stabilizing outside).
pub fn oracle_policy(
    env: &dyn Environment,
    threshold: u32,
    solver: &SolverChoice,
) -> Result<(PiecewisePolicy, SolveResult), DiagnosticsError> {
    let partition = Partition::new(threshold, env.max_change())?;
    let mdp = true_kernel(env, threshold, DEFAULT_STATE_CAP)?;
    let space = *mdp.space().expect("true kernels carry their space");
    let solve = solver.solve(&mdp, None)?;
    let policy = PiecewisePolicy::exploitation(Arc::new(solve.policy.clone()), space, partition);
    Ok((policy, solve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub threshold: u32,
    pub boundary_mass: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_halfwidth: f64,
    /// Slots measured after burn-in.
    pub slots: u64,
    #[serde(skip)]
    pub block_means: Vec<f64>,
}

/// Fraction of post-burn-in slots the untruncated chain spends in the
/// boundary set under the oracle piecewise policy.
pub fn boundary_mass(
    env: &dyn Environment,
    threshold: u32,
    solver: &SolverChoice,
    slots: u64,
    burn_in: u64,
    seed: u64,
) -> Result<TailEstimate, DiagnosticsError> {
    if burn_in >= slots {
        return Err(DiagnosticsError::Invalid(format!("burn_in {burn_in} must be below slots {slots}")));
    }
    let (policy, _) = oracle_policy(env, threshold, solver)?;
    let partition = *policy.partition();
    let measured = slots - burn_in;
    let mut blocks = BlockAccumulator::new(measured, DEFAULT_BLOCKS);
    let mut rng: SimRng = stream(seed, "boundary", 0);
    let mut policy_rng: SimRng = stream(seed, "policy", 0);
    simulate(
        env,
        &vec![0; env.queue_count()],
        slots,
        &mut rng,
        |q, _| policy.decide(q, env, &mut policy_rng),
        |t, q| {
            if t > burn_in {
                blocks.push(if partition.is_boundary(q) { 1.0 } else { 0.0 });
            }
        },
    );
    let block_means = blocks.block_means();
    let mut boot: SimRng = stream(seed, "bootstrap", 0);
    let ci = bootstrap_mean(&block_means, DEFAULT_RESAMPLES, &mut boot);
    let ci = if ci.estimate == 0.0 {
        // nothing observed: one-sided bound from the rule of three
        Interval {
            estimate: 0.0,
            low: 0.0,
            high: (3.0 / measured as f64).min(1.0),
        }
    } else {
        ci
    };
    Ok(TailEstimate {
        threshold,
        boundary_mass: ci.estimate,
        ci_low: ci.low,
        ci_high: ci.high,
        ci_halfwidth: ci.halfwidth(),
        slots: measured,
        block_means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeTest {
    pub slope: f64,
    /// Fraction of bootstrap slopes that are not negative.
    pub p_value: f64,
}

/// Least-squares slope of `ln(boundary_mass)` against `U`, with a bootstrap
/// over each estimate's blocks. Zero masses are floored at half an
/// observation so the logarithm stays finite.
pub fn tail_slope(estimates: &[TailEstimate], resamples: usize, rng: &mut dyn RngCore) -> SlopeTest {
    let x: Vec<f64> = estimates.iter().map(|e| e.threshold as f64).collect();
    let log_mass = |m: f64, slots: u64| m.max(0.5 / slots as f64).ln();
    let y: Vec<f64> = estimates.iter().map(|e| log_mass(e.boundary_mass, e.slots)).collect();
    let slope = ols_slope(&x, &y);
    let mut not_negative = 0usize;
    let mut y_boot = vec![0.0; estimates.len()];
    for _ in 0..resamples {
        for (yb, e) in y_boot.iter_mut().zip(estimates) {
            let k = e.block_means.len();
            let m = (0..k).map(|_| e.block_means[rng.gen_range(0..k)]).sum::<f64>() / k as f64;
            *yb = log_mass(m, e.slots);
        }
        if ols_slope(&x, &y_boot) >= 0.0 {
            not_negative += 1;
        }
    }
    SlopeTest {
        slope,
        p_value: not_negative as f64 / resamples.max(1) as f64,
    }
}

/// Visits per state-action pair after which every empirical row is within
/// `delta_p` in L1 of the truth with probability `1 - delta`:
/// `ceil(2 / delta_p^2 * ln(2^(R+1) (U+1)^D |A| / delta))`.
pub fn sample_requirement(
    delta_p: f64,
    reach: u32,
    threshold: u32,
    queues: u32,
    action_count: usize,
    delta: f64,
) -> Result<u64, DiagnosticsError> {
    if !(delta_p > 0.0 && delta_p <= 2.0) {
        return Err(DiagnosticsError::Invalid(format!("delta_p {delta_p} is outside (0, 2]")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DiagnosticsError::Invalid(format!("delta {delta} is outside (0, 1)")));
    }
    if reach == 0 || action_count == 0 {
        return Err(DiagnosticsError::Invalid("reach and action_count must be positive".into()));
    }
    let log_arg = (reach as f64 + 1.0) * std::f64::consts::LN_2
        + queues as f64 * (threshold as f64 + 1.0).ln()
        + (action_count as f64).ln()
        - delta.ln();
    Ok((2.0 / (delta_p * delta_p) * log_arg).ceil() as u64)
}

/// `(3T / 2L)^(2/3)`, the largest episode count `T` slots can hold.
pub fn episode_count_bound(total_slots: f64, budget_scale: f64) -> f64 {
    (1.5 * total_slots / budget_scale).powf(2.0 / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBacklog {
    /// Optimal gain of the truncated model.
    pub rho_tilde_star: f64,
    /// Simulated backlog of the untruncated chain under the piecewise oracle.
    pub piecewise: Interval,
    #[serde(skip)]
    pub policy: Vec<ActionId>,
}

/// Known-dynamics reference: solve the true truncated kernel with RVI and
/// simulate its piecewise extension.
pub fn oracle_backlog(
    env: &dyn Environment,
    threshold: u32,
    slots: u64,
    burn_in: u64,
    seed: u64,
) -> Result<OracleBacklog, DiagnosticsError> {
    let (policy, solve) = oracle_policy(env, threshold, &SolverChoice::default())?;
    let rho = solve.gain.expect("relative value iteration reports a gain");
    let mut policy_rng: SimRng = stream(seed, "policy", 0);
    let summary = backlog_summary(env, &vec![0; env.queue_count()], slots, burn_in, seed, |q, _| {
        policy.decide(q, env, &mut policy_rng)
    });
    Ok(OracleBacklog {
        rho_tilde_star: rho,
        piecewise: summary.steady,
        policy: solve.policy,
    })
}
