//! Single runs, seed fan-out and grid sweeps.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rlqn_core::diagnostics::oracle_policy;
use rlqn_core::rlqn::{Learner, LearnedPolicy, RlqnError};
use rlqn_core::rng::{stream, SimRng};
use rlqn_core::sim::simulate;
use rlqn_core::state::total_backlog;
use rlqn_core::stats::{t_interval, Interval};
use rlqn_core::{ActionId, Environment, Partition, StateSpace};

use crate::config::{baseline_rule, AlgoConfig, Arm, BaselineParams, BaselineRule, ExperimentConfig, OracleParams};
use crate::output::{inner, io_err, write_episodes, write_manifest, write_policy, Manifest, MetricsWriter, SEEDING_RULE};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub final_running_avg: f64,
    /// Block-bootstrap interval of the run's average backlog.
    pub ci: Interval,
    pub slots: u64,
    pub episodes: usize,
}

/// Runs `items` on up to `workers` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

fn runtime(e: RlqnError) -> HarnessError {
    match e {
        RlqnError::Config(_) | RlqnError::State(_) => HarnessError::Config(e.to_string()),
        other => HarnessError::Runtime(other.to_string()),
    }
}

fn start_state(initial: Option<&rlqn_core::QueueVector>, env: &dyn Environment) -> Vec<u32> {
    initial
        .map(|q| q.as_slice().to_vec())
        .unwrap_or_else(|| vec![0; env.queue_count()])
}

/// Executes one (algorithm, seed) cell into `dir`: episodes.csv,
/// metrics.csv, policy.csv and manifest.toml.
pub fn run_cell(
    config: &ExperimentConfig,
    algo: &AlgoConfig,
    seed: u64,
    dir: &Path,
    timing: bool,
) -> Result<CellOutcome, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let env = config.build_env()?;
    let env = env.as_ref();
    let mut metrics = MetricsWriter::create(&dir.join("metrics.csv"), config.stride)?;
    let (episodes, episode_count) = match algo {
        AlgoConfig::Rlqn(params) => {
            let learner = Learner::new(env, params.to_config(seed, timing)).map_err(runtime)?;
            let mut failure = None;
            let outcome = learner.run(&mut |row| {
                if failure.is_none() {
                    failure = metrics
                        .push(row.t, row.total_backlog, row.episode, row.mode.as_str())
                        .err();
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            let outcome = outcome.map_err(runtime)?;
            write_policy(
                &dir.join("policy.csv"),
                env,
                &outcome.space,
                inner(outcome.partition),
                |id, q| match &outcome.final_policy {
                    LearnedPolicy::Table { solve } => solve.policy[id],
                    LearnedPolicy::Cmu(rule) => rule.decide(q),
                },
            )?;
            let n = outcome.episodes.len();
            (outcome.episodes, n)
        }
        AlgoConfig::Baseline(params) => {
            run_baseline(env, params, seed, &mut metrics)?;
            let space = StateSpace::with_default_cap(env.queue_count(), params.threshold)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            match baseline_rule(&params.policy, env)? {
                BaselineRule::Stabilizing => {
                    write_policy(&dir.join("policy.csv"), env, &space, |_| true, |_, q| env.stabilizing_action(q))?
                }
                // a randomized rule has no table
                BaselineRule::UniformRandom => write_policy(&dir.join("policy.csv"), env, &space, |_| false, |_, _| ActionId(0))?,
            }
            (Vec::new(), 0)
        }
        AlgoConfig::Oracle(params) => {
            let (space, partition, table) = run_oracle(env, params, seed, &mut metrics)?;
            write_policy(&dir.join("policy.csv"), env, &space, inner(partition), |id, _| table[id])?;
            (Vec::new(), 0)
        }
    };
    write_episodes(&dir.join("episodes.csv"), &episodes)?;
    let slots = metrics.slots();
    let ci = metrics.finish(seed)?;
    let mut effective = config.clone();
    effective.algo = algo.clone();
    effective.seeds = vec![seed];
    effective.grid = None;
    effective.output = None;
    let final_running_avg = ci.estimate;
    write_manifest(
        &dir.join("manifest.toml"),
        &Manifest {
            config_digest: effective.digest(seed),
            seed,
            core_version: rlqn_core::VERSION,
            harness_version: env!("CARGO_PKG_VERSION"),
            seeding: SEEDING_RULE,
            algo: algo.label(),
            env: env.name(),
            total_slots: slots,
            episodes: episode_count,
            final_running_avg,
            config: &effective,
        },
    )?;
    Ok(CellOutcome {
        final_running_avg,
        ci,
        slots,
        episodes: episode_count,
    })
}

fn run_baseline(
    env: &dyn Environment,
    params: &BaselineParams,
    seed: u64,
    metrics: &mut MetricsWriter,
) -> Result<(), HarnessError> {
    let rule = baseline_rule(&params.policy, env)?;
    let mut dynamics: SimRng = stream(seed, "dynamics", 0);
    let mut policy_rng: SimRng = stream(seed, "policy", 0);
    let mut failure = None;
    let actions = env.action_count();
    simulate(
        env,
        &start_state(params.initial_state.as_ref(), env),
        params.slots,
        &mut dynamics,
        |q, _| match rule {
            BaselineRule::Stabilizing => env.stabilizing_action(q),
            BaselineRule::UniformRandom => rlqn_core::baselines::uniform_random(actions, &mut policy_rng),
        },
        |t, q| {
            if failure.is_none() {
                failure = metrics.push(t, total_backlog(q), 0, "BASELINE").err();
            }
        },
    );
    failure.map_or(Ok(()), Err)
}

fn run_oracle(
    env: &dyn Environment,
    params: &OracleParams,
    seed: u64,
    metrics: &mut MetricsWriter,
) -> Result<(StateSpace, Partition, Vec<ActionId>), HarnessError> {
    let (policy, solve) =
        oracle_policy(env, params.threshold, &params.solver).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let space = StateSpace::with_default_cap(env.queue_count(), params.threshold)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut dynamics: SimRng = stream(seed, "dynamics", 0);
    let mut policy_rng: SimRng = stream(seed, "policy", 0);
    let mut failure = None;
    simulate(
        env,
        &vec![0; env.queue_count()],
        params.slots,
        &mut dynamics,
        |q, _| policy.decide(q, env, &mut policy_rng),
        |t, q| {
            if failure.is_none() {
                failure = metrics.push(t, total_backlog(q), 0, "ORACLE").err();
            }
        },
    );
    failure.map_or(Ok(()), Err)?;
    Ok((space, *policy.partition(), solve.policy))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// The `run` subcommand: one cell per seed under `out/seed-<s>`.
pub fn run(config: &ExperimentConfig, out: &Path, workers: usize, timing: bool) -> Result<Vec<CellOutcome>, HarnessError> {
    let results = parallel_map(&config.seeds, workers, |&seed| {
        run_cell(config, &config.algo, seed, &seed_dir(out, seed), timing)
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub arm: Arm,
    /// `None` for arms that do not depend on `U`.
    pub threshold: Option<u32>,
    pub seed: u64,
    pub algo: AlgoConfig,
    pub dir: PathBuf,
}

/// Cross product of arms, thresholds and seeds. The stabilizing arm does
/// not depend on `U` and gets one cell per seed.
pub fn sweep_cells(config: &ExperimentConfig, out: &Path) -> Vec<Cell> {
    let grid = config.grid.clone().unwrap_or(crate::config::GridConfig {
        thresholds: Vec::new(),
        arms: vec![Arm::Algo],
        baseline_slots: None,
    });
    let thresholds = if grid.thresholds.is_empty() {
        vec![config.algo.threshold()]
    } else {
        grid.thresholds.clone()
    };
    let baseline_slots = grid.baseline_slots.unwrap_or(0);
    let oracle_solver = match &config.algo {
        AlgoConfig::Rlqn(p) if p.solver.label() != "cmu" => p.solver.clone(),
        AlgoConfig::Oracle(p) => p.solver.clone(),
        _ => Default::default(),
    };
    let mut cells = Vec::new();
    for &arm in &grid.arms {
        match arm {
            Arm::Pi0 => {
                for &seed in &config.seeds {
                    cells.push(Cell {
                        arm,
                        threshold: None,
                        seed,
                        algo: AlgoConfig::Baseline(BaselineParams {
                            policy: "stabilizing".into(),
                            slots: baseline_slots,
                            threshold: config.algo.threshold(),
                            initial_state: None,
                        }),
                        dir: seed_dir(&out.join("pi0"), seed),
                    });
                }
            }
            Arm::Algo | Arm::Oracle => {
                for &u in &thresholds {
                    for &seed in &config.seeds {
                        let algo = match arm {
                            Arm::Algo => config.algo.with_threshold(u),
                            _ => AlgoConfig::Oracle(OracleParams {
                                threshold: u,
                                slots: baseline_slots,
                                solver: oracle_solver.clone(),
                            }),
                        };
                        cells.push(Cell {
                            arm,
                            threshold: Some(u),
                            seed,
                            algo,
                            dir: seed_dir(&out.join(format!("{}-U{u}", arm.label())), seed),
                        });
                    }
                }
            }
        }
    }
    cells
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "arm",
    "threshold",
    "seed",
    "status",
    "final_running_avg",
    "ci_low",
    "ci_high",
    "slots",
    "episodes",
    "error",
];

pub const AGGREGATE_HEADER: [&str; 8] = [
    "arm",
    "threshold",
    "seeds",
    "mean_running_avg",
    "ci_low",
    "ci_high",
    "mean_slots",
    "mean_episodes",
];

/// The `sweep` subcommand. Every cell runs even if others fail; the summary
/// is written once all cells are done.
pub fn sweep(config: &ExperimentConfig, out: &Path, workers: usize, timing: bool) -> Result<Vec<(Cell, Result<CellOutcome, String>)>, HarnessError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let cells = sweep_cells(config, out);
    let results = parallel_map(&cells, workers, |cell| {
        run_cell(config, &cell.algo, cell.seed, &cell.dir, timing).map_err(|e| e.to_string())
    });
    let done: Vec<_> = cells.into_iter().zip(results).collect();
    write_summary(&out.join("summary.csv"), &done)?;
    write_aggregate(&out.join("aggregate.csv"), &done)?;
    let failed = done.iter().filter(|(_, r)| r.is_err()).count();
    if failed > 0 {
        for (cell, r) in &done {
            if let Err(e) = r {
                eprintln!("cell {}: {e}", cell.dir.display());
            }
        }
        return Err(HarnessError::SweepFailed {
            failed,
            total: done.len(),
        });
    }
    Ok(done)
}

fn threshold_label(t: Option<u32>) -> String {
    t.map(|u| u.to_string()).unwrap_or_default()
}

fn write_summary(path: &Path, done: &[(Cell, Result<CellOutcome, String>)]) -> Result<(), HarnessError> {
    let mut w = crate::output::create_writer(path)?;
    let wrap = |e: csv::Error| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(SUMMARY_HEADER).map_err(wrap)?;
    for (cell, r) in done {
        let mut row = vec![cell.arm.label().to_string(), threshold_label(cell.threshold), cell.seed.to_string()];
        match r {
            Ok(o) => row.extend([
                "ok".to_string(),
                o.final_running_avg.to_string(),
                o.ci.low.to_string(),
                o.ci.high.to_string(),
                o.slots.to_string(),
                o.episodes.to_string(),
                String::new(),
            ]),
            Err(e) => row.extend([
                "failed".to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ]),
        }
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_aggregate(path: &Path, done: &[(Cell, Result<CellOutcome, String>)]) -> Result<(), HarnessError> {
    let mut w = crate::output::create_writer(path)?;
    let wrap = |e: csv::Error| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(AGGREGATE_HEADER).map_err(wrap)?;
    let mut keys: Vec<(Arm, Option<u32>)> = Vec::new();
    for (cell, _) in done {
        if !keys.contains(&(cell.arm, cell.threshold)) {
            keys.push((cell.arm, cell.threshold));
        }
    }
    for (arm, threshold) in keys {
        let ok: Vec<&CellOutcome> = done
            .iter()
            .filter(|(c, _)| c.arm == arm && c.threshold == threshold)
            .filter_map(|(_, r)| r.as_ref().ok())
            .collect();
        if ok.is_empty() {
            continue;
        }
        let avgs: Vec<f64> = ok.iter().map(|o| o.final_running_avg).collect();
        let ci = t_interval(&avgs);
        let n = ok.len() as f64;
        w.write_record([
            arm.label().to_string(),
            threshold_label(threshold),
            ok.len().to_string(),
            ci.estimate.to_string(),
            ci.low.to_string(),
            ci.high.to_string(),
            (ok.iter().map(|o| o.slots as f64).sum::<f64>() / n).to_string(),
            (ok.iter().map(|o| o.episodes as f64).sum::<f64>() / n).to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}
