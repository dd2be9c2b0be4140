//! `solve` and `diagnose` subcommands.

use std::path::Path;

use rlqn_core::diagnostics::{
    boundary_mass, episode_count_bound, hitting_time_profile, oracle_backlog, sample_requirement, tail_slope,
    HITTING_CAP,
};
use rlqn_core::envs::{true_kernel, EnvError};
use rlqn_core::rng::stream;
use rlqn_core::solvers::{cmu_solve, policy_evaluation_average, SolveResult, SolverChoice};
use rlqn_core::state::DEFAULT_STATE_CAP;
use rlqn_core::stats::DEFAULT_RESAMPLES;
use rlqn_core::EnvConfig;

use crate::config::{AlgoConfig, ExperimentConfig};
use crate::output::{create_writer, io_err, write_policy};
use crate::HarnessError;

fn csv_wrap(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Parses a solver name from the command line into its default parameters.
pub fn solver_by_name(name: &str) -> Result<SolverChoice, HarnessError> {
    let text = format!("name = \"{name}\"");
    toml::from_str(&text).map_err(|_| HarnessError::Config(format!("unknown solver `{name}` (expected rvi, vi, pi or cmu)")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    pub solver: String,
    pub threshold: u32,
    pub states: usize,
    /// Average cost of the returned policy on the truncated model.
    pub gain: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Builds the true truncated kernel and solves it, writing policy.csv (every
/// truncated state) and solve.csv under `out`.
pub fn solve(
    config: &ExperimentConfig,
    threshold: Option<u32>,
    solver: Option<SolverChoice>,
    out: &Path,
) -> Result<SolveSummary, HarnessError> {
    let env = config.build_env()?;
    let env = env.as_ref();
    let threshold = threshold.unwrap_or_else(|| config.algo.threshold());
    let solver = solver.unwrap_or_else(|| match &config.algo {
        AlgoConfig::Rlqn(p) => p.solver.clone(),
        AlgoConfig::Oracle(p) => p.solver.clone(),
        AlgoConfig::Baseline(_) => SolverChoice::default(),
    });
    let mdp = true_kernel(env, threshold, DEFAULT_STATE_CAP).map_err(|e| match e {
        EnvError::State(s) => HarnessError::Config(s.to_string()),
        other => HarnessError::Runtime(other.to_string()),
    })?;
    let space = *mdp.space().expect("true kernels carry their space");
    let result = match &solver {
        SolverChoice::Cmu => {
            let p = match &config.env {
                EnvConfig::ServerAllocation { p, .. } => p.clone(),
                _ => return Err(HarnessError::Config("the cmu solver only applies to server allocation".into())),
            };
            let rule = cmu_solve(&p);
            let mut q = vec![0u32; space.queues()];
            let policy = (0..space.size())
                .map(|id| {
                    space.write_vector(id, &mut q);
                    rule.decide(&q)
                })
                .collect();
            SolveResult {
                policy,
                values: Vec::new(),
                gain: None,
                iterations: 0,
                residual: 0.0,
            }
        }
        other => other.solve(&mdp, None).map_err(|e| HarnessError::Runtime(e.to_string()))?,
    };
    let gain = result
        .gain
        .or_else(|| policy_evaluation_average(&mdp, &result.policy).ok());
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_policy(&out.join("policy.csv"), env, &space, |_| true, |id, _| result.policy[id])?;
    let summary = SolveSummary {
        solver: solver.label().to_string(),
        threshold,
        states: space.size(),
        gain,
        iterations: result.iterations,
        residual: result.residual,
    };
    let path = out.join("solve.csv");
    let mut w = create_writer(&path)?;
    w.write_record(["solver", "threshold", "states", "gain", "iterations", "residual"])
        .map_err(csv_wrap(&path))?;
    w.write_record([
        summary.solver.clone(),
        threshold.to_string(),
        summary.states.to_string(),
        gain.map(|g| g.to_string()).unwrap_or_default(),
        summary.iterations.to_string(),
        summary.residual.to_string(),
    ])
    .map_err(csv_wrap(&path))?;
    w.flush().map_err(io_err(&path))?;
    Ok(summary)
}

fn diag_err(e: rlqn_core::diagnostics::DiagnosticsError) -> HarnessError {
    use rlqn_core::diagnostics::DiagnosticsError as D;
    match e {
        D::Invalid(_) | D::State(_) => HarnessError::Config(e.to_string()),
        other => HarnessError::Runtime(other.to_string()),
    }
}

/// Writes hitting.csv: `l1_distance,mean_hitting_time,std_error,sample_count,capped`.
pub fn diagnose_hitting(
    config: &ExperimentConfig,
    threshold: u32,
    pairs: usize,
    cap: Option<u64>,
    seed: u64,
    out: &Path,
) -> Result<rlqn_core::diagnostics::HittingProfile, HarnessError> {
    let env = config.build_env()?;
    let e = env.as_ref();
    let profile = hitting_time_profile(e, threshold, pairs, cap.unwrap_or(HITTING_CAP), seed, |q, _| {
        e.stabilizing_action(q)
    })
    .map_err(diag_err)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("hitting.csv");
    let mut w = create_writer(&path)?;
    w.write_record(["l1_distance", "mean_hitting_time", "std_error", "sample_count", "capped"])
        .map_err(csv_wrap(&path))?;
    for r in &profile.rows {
        w.write_record([
            r.l1_distance.to_string(),
            r.mean_hitting_time.to_string(),
            r.std_error.to_string(),
            r.sample_count.to_string(),
            r.capped.to_string(),
        ])
        .map_err(csv_wrap(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(profile)
}

/// Writes boundary.csv: one row per threshold, and returns the fitted
/// log-mass slope with its bootstrap p-value.
pub fn diagnose_boundary(
    config: &ExperimentConfig,
    thresholds: &[u32],
    slots: u64,
    burn_in: Option<u64>,
    seed: u64,
    out: &Path,
) -> Result<rlqn_core::diagnostics::SlopeTest, HarnessError> {
    let env = config.build_env()?;
    let solver = SolverChoice::default();
    let burn_in = burn_in.unwrap_or(slots / 10);
    let estimates = thresholds
        .iter()
        .map(|&u| boundary_mass(env.as_ref(), u, &solver, slots, burn_in, seed).map_err(diag_err))
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("boundary.csv");
    let mut w = create_writer(&path)?;
    w.write_record(["threshold", "boundary_mass", "ci_low", "ci_high", "ci_halfwidth", "slots"])
        .map_err(csv_wrap(&path))?;
    for e in &estimates {
        w.write_record([
            e.threshold.to_string(),
            e.boundary_mass.to_string(),
            e.ci_low.to_string(),
            e.ci_high.to_string(),
            e.ci_halfwidth.to_string(),
            e.slots.to_string(),
        ])
        .map_err(csv_wrap(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let mut rng = stream(seed, "slope", 0);
    Ok(tail_slope(&estimates, DEFAULT_RESAMPLES, &mut rng))
}

/// Writes oracle.csv: `threshold,rho_tilde_star,piecewise_rho,ci_low,ci_high,slots`.
pub fn diagnose_oracle(
    config: &ExperimentConfig,
    threshold: u32,
    slots: u64,
    burn_in: Option<u64>,
    seed: u64,
    out: &Path,
) -> Result<rlqn_core::diagnostics::OracleBacklog, HarnessError> {
    let env = config.build_env()?;
    let o = oracle_backlog(env.as_ref(), threshold, slots, burn_in.unwrap_or(slots / 10), seed).map_err(diag_err)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("oracle.csv");
    let mut w = create_writer(&path)?;
    w.write_record(["threshold", "rho_tilde_star", "piecewise_rho", "ci_low", "ci_high", "slots"])
        .map_err(csv_wrap(&path))?;
    w.write_record([
        threshold.to_string(),
        o.rho_tilde_star.to_string(),
        o.piecewise.estimate.to_string(),
        o.piecewise.low.to_string(),
        o.piecewise.high.to_string(),
        slots.to_string(),
    ])
    .map_err(csv_wrap(&path))?;
    w.flush().map_err(io_err(&path))?;
    Ok(o)
}

pub fn diagnose_sample_requirement(
    delta_p: f64,
    reach: u32,
    threshold: u32,
    queues: u32,
    actions: usize,
    delta: f64,
) -> Result<u64, HarnessError> {
    sample_requirement(delta_p, reach, threshold, queues, actions, delta).map_err(diag_err)
}

pub fn diagnose_episode_bound(total_slots: f64, budget_scale: f64) -> Result<f64, HarnessError> {
    if !(total_slots > 0.0 && budget_scale > 0.0) {
        return Err(HarnessError::Config("slots and budget scale must be positive".into()));
    }
    Ok(episode_count_bound(total_slots, budget_scale))
}
