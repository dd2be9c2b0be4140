//! Plain simulation of a fixed policy on the unbounded state space.

use rand::RngCore;

use crate::envs::Environment;
use crate::rng::{stream, SimRng};
use crate::state::{total_backlog, ActionId};
use crate::stats::{bootstrap_mean, BlockAccumulator, Interval, DEFAULT_BLOCKS, DEFAULT_RESAMPLES};

/// Long-run backlog of one simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BacklogSummary {
    /// Slots simulated, burn-in included.
    pub slots: u64,
    pub burn_in: u64,
    /// Mean total backlog after burn-in, with a block-bootstrap interval.
    pub steady: Interval,
    /// Running average over every slot, burn-in included.
    pub running_avg: f64,
}

/// Simulates `slots` slots from `initial`, calling `decide` at every slot and
/// `observe(t, q)` with the state at the start of slot `t` (1-based).
pub fn simulate<D, O>(
    env: &dyn Environment,
    initial: &[u32],
    slots: u64,
    rng: &mut dyn RngCore,
    mut decide: D,
    mut observe: O,
) -> Vec<u32>
where
    D: FnMut(&[u32], &mut dyn RngCore) -> ActionId,
    O: FnMut(u64, &[u32]),
{
    let mut q = initial.to_vec();
    for t in 1..=slots {
        observe(t, &q);
        let a = decide(&q, rng);
        env.step_in_place(&mut q, a, rng);
    }
    q
}

/// Average backlog of `decide` over `slots` slots after a `burn_in`,
/// with 100-block bootstrap bounds. Dynamics and bootstrap use separate
/// streams derived from `seed`.
pub fn backlog_summary<D>(
    env: &dyn Environment,
    initial: &[u32],
    slots: u64,
    burn_in: u64,
    seed: u64,
    decide: D,
) -> BacklogSummary
where
    D: FnMut(&[u32], &mut dyn RngCore) -> ActionId,
{
    let mut rng: SimRng = stream(seed, "simulate", 0);
    let measured = slots.saturating_sub(burn_in);
    let mut blocks = BlockAccumulator::new(measured, DEFAULT_BLOCKS);
    let mut running = 0.0;
    simulate(env, initial, slots, &mut rng, decide, |t, q| {
        let b = total_backlog(q) as f64;
        running += b;
        if t > burn_in {
            blocks.push(b);
        }
    });
    let mut boot = stream(seed, "bootstrap", 0);
    BacklogSummary {
        slots,
        burn_in,
        steady: bootstrap_mean(&blocks.block_means(), DEFAULT_RESAMPLES, &mut boot),
        running_avg: if slots > 0 { running / slots as f64 } else { 0.0 },
    }
}
