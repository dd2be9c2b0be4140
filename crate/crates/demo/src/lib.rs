//! Browser bindings for the static page in `www/`.
//!
//! Environments arrive as JSON in the same shape as the `[env]` table of an
//! experiment file, e.g. `{"kind":"server_allocation","lambda":[0.3,0.2],"p":[0.9,0.6]}`.
//! Every call returns a JSON string.

use serde_json::json;
use wasm_bindgen::prelude::*;

use rlqn_core::diagnostics::{boundary_mass, oracle_policy, tail_slope};
use rlqn_core::rlqn::{Learner, RlqnConfig};
use rlqn_core::rng::stream;
use rlqn_core::sim::simulate;
use rlqn_core::solvers::SolverChoice;
use rlqn_core::state::total_backlog;
use rlqn_core::stats::DEFAULT_RESAMPLES;
use rlqn_core::{ActionId, EnvConfig, Environment};

/// Largest number of episodes a page request may ask for.
pub const MAX_EPISODES: usize = 2000;

fn build(env_json: &str) -> Result<Box<dyn Environment>, String> {
    let config: EnvConfig = serde_json::from_str(env_json).map_err(|e| format!("environment: {e}"))?;
    config.build().map_err(|e| e.to_string())
}

/// Oracle policy on the truncated space of a two-queue environment.
pub fn policy_map(env_json: &str, threshold: u32) -> Result<String, String> {
    let env = build(env_json)?;
    if env.queue_count() != 2 {
        return Err(format!("policy maps need two queues, this environment has {}", env.queue_count()));
    }
    let (policy, solve) = oracle_policy(env.as_ref(), threshold, &SolverChoice::default()).map_err(|e| e.to_string())?;
    let space = rlqn_core::StateSpace::with_default_cap(2, threshold).map_err(|e| e.to_string())?;
    let mut cells = Vec::with_capacity(space.size());
    for (id, q) in space.iter().enumerate() {
        let inner = policy.in_region(q.as_slice());
        let action = if inner {
            solve.policy[id]
        } else {
            env.stabilizing_action(q.as_slice())
        };
        cells.push(json!({ "q": q.as_slice(), "action": action.index(), "inner": inner }));
    }
    let labels: Vec<String> = (0..env.action_count()).map(|a| env.action_label(ActionId(a))).collect();
    Ok(json!({
        "threshold": threshold,
        "gain": solve.gain,
        "labels": labels,
        "cells": cells,
    })
    .to_string())
}

/// Running averages of RL-QN and of the stabilizing rule over the same
/// horizon, sampled at up to `points` slots.
pub fn compare(
    env_json: &str,
    threshold: u32,
    budget_scale: f64,
    episodes: usize,
    seed: u64,
    points: usize,
) -> Result<String, String> {
    let env = build(env_json)?;
    if episodes > MAX_EPISODES {
        return Err(format!("at most {MAX_EPISODES} episodes in the browser"));
    }
    let mut config = RlqnConfig::new(threshold, budget_scale, episodes);
    config.seed = seed;
    config.metrics_stride = 1;
    let mut learned = Vec::new();
    let out = Learner::new(env.as_ref(), config)
        .map_err(|e| e.to_string())?
        .run(&mut |row| learned.push(row.running_avg))
        .map_err(|e| e.to_string())?;
    let slots = out.total_slots;
    let mut baseline = Vec::with_capacity(slots as usize);
    let mut cumulative = 0u64;
    let mut rng = stream(seed, "dynamics", 0);
    simulate(
        env.as_ref(),
        &vec![0; env.queue_count()],
        slots,
        &mut rng,
        |q, _| env.stabilizing_action(q),
        |t, q| {
            cumulative += total_backlog(q);
            baseline.push(cumulative as f64 / t as f64);
        },
    );
    let step = (slots as usize / points.max(2)).max(1);
    let mut t = Vec::new();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in (0..slots as usize).step_by(step).chain(std::iter::once(slots as usize - 1)) {
        if t.last() == Some(&(i + 1)) {
            continue;
        }
        t.push(i + 1);
        a.push(learned[i]);
        b.push(baseline[i]);
    }
    let explore = out.episodes.iter().filter(|r| r.mode == rlqn_core::rlqn::Mode::Explore).count();
    Ok(json!({
        "t": t,
        "rlqn": a,
        "pi0": b,
        "slots": slots,
        "episodes": out.episodes.len(),
        "explore_episodes": explore,
    })
    .to_string())
}

/// Boundary-set mass under the oracle policy for each threshold in
/// `low..=high`, with the fitted log-mass slope.
pub fn boundary(env_json: &str, low: u32, high: u32, slots: u64, seed: u64) -> Result<String, String> {
    let env = build(env_json)?;
    if low > high {
        return Err("empty threshold range".into());
    }
    let estimates = (low..=high)
        .map(|u| boundary_mass(env.as_ref(), u, &SolverChoice::default(), slots, slots / 10, seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mut rng = stream(seed, "slope", 0);
    let slope = tail_slope(&estimates, DEFAULT_RESAMPLES, &mut rng);
    let rows: Vec<_> = estimates
        .iter()
        .map(|e| json!({ "threshold": e.threshold, "mass": e.boundary_mass, "low": e.ci_low, "high": e.ci_high }))
        .collect();
    Ok(json!({ "rows": rows, "slope": slope.slope, "p_value": slope.p_value }).to_string())
}

#[wasm_bindgen(js_name = policyMap)]
pub fn policy_map_js(env_json: &str, threshold: u32) -> Result<String, JsError> {
    policy_map(env_json, threshold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compare)]
pub fn compare_js(
    env_json: &str,
    threshold: u32,
    budget_scale: f64,
    episodes: usize,
    seed: u32,
    points: usize,
) -> Result<String, JsError> {
    compare(env_json, threshold, budget_scale, episodes, seed as u64, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = boundary)]
pub fn boundary_js(env_json: &str, low: u32, high: u32, slots: u32, seed: u32) -> Result<String, JsError> {
    boundary(env_json, low, high, slots as u64, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn version() -> String {
    rlqn_core::VERSION.to_string()
}
