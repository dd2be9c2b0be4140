use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rlqn_harness::config::{self, ExperimentConfig};
use rlqn_harness::{plot, runner, tools, HarnessError, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "rlqn", version, about = "Queueing network control by model-based RL on a truncated state space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output` in the config, then `runs/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's seed list; repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Metrics thinning stride.
    #[arg(long)]
    stride: Option<u64>,
    /// `key=value` with a dotted key, for example `algo.threshold=10`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct Parallel {
    /// Concurrent cells.
    #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
    workers: usize,
    /// Record solve wall time in episodes.csv (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One run per seed.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        parallel: Parallel,
    },
    /// Grid over thresholds, seeds and arms, with summary.csv and aggregate.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        parallel: Parallel,
    },
    /// Solve the true truncated model and print its gain.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Threshold `U`; defaults to the algo block's.
        #[arg(long)]
        threshold: Option<u32>,
        /// rvi, vi, pi or cmu; defaults to the algo block's.
        #[arg(long)]
        solver: Option<String>,
    },
    /// Empirical probes.
    Diagnose {
        #[command(subcommand)]
        probe: Probe,
    },
    /// Aligned running-average curves from a run or sweep directory.
    EmitPlotData {
        run_dir: PathBuf,
        /// Defaults to `<run_dir>/plot`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Maximum rows per file.
        #[arg(long, default_value_t = plot::DEFAULT_POINTS)]
        points: usize,
    },
}

#[derive(Subcommand)]
enum Probe {
    /// Hitting times of the truncated chain under the stabilizing rule.
    Hitting {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold: Option<u32>,
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        /// Per-pair slot cap.
        #[arg(long)]
        cap: Option<u64>,
    },
    /// Boundary-set occupancy under the oracle policy, per threshold.
    Boundary {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<u32>,
        #[arg(long, default_value_t = 1_000_000)]
        slots: u64,
        /// Defaults to 10% of slots.
        #[arg(long)]
        burn_in: Option<u64>,
    },
    /// Known-dynamics reference backlog.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold: Option<u32>,
        #[arg(long, default_value_t = 1_000_000)]
        slots: u64,
        #[arg(long)]
        burn_in: Option<u64>,
    },
    /// Visits per pair that make every empirical row accurate.
    SampleRequirement {
        #[arg(long)]
        delta_p: f64,
        #[arg(long)]
        reach: u32,
        #[arg(long)]
        threshold: u32,
        #[arg(long)]
        queues: u32,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        delta: f64,
    },
    /// Largest episode count a horizon can hold.
    EpisodeBound {
        #[arg(long)]
        slots: f64,
        #[arg(long)]
        budget_scale: f64,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.stride {
        overrides.push(format!("stride={s}"));
    }
    if !common.seeds.is_empty() {
        let list: Vec<String> = common.seeds.iter().map(|s| s.to_string()).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
    }
    let config = config::load(&common.config, &overrides)?;
    let out = common
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| {
            let stem = common.config.file_stem().map(|s| s.to_string_lossy().into_owned());
            PathBuf::from("runs").join(stem.unwrap_or_else(|| "run".into()))
        });
    Ok((config, out))
}

fn first_seed(config: &ExperimentConfig) -> u64 {
    config.seeds[0]
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { common, parallel } => {
            let (config, out) = load(&common)?;
            for w in config.build_env()?.warnings() {
                eprintln!("warning: {w}");
            }
            let outcomes = runner::run(&config, &out, parallel.workers, parallel.timing)?;
            for (seed, o) in config.seeds.iter().zip(&outcomes) {
                println!(
                    "seed {seed}: running average {} over {} slots, {} episodes",
                    o.final_running_avg, o.slots, o.episodes
                );
            }
        }
        Command::Sweep { common, parallel } => {
            let (config, out) = load(&common)?;
            let done = runner::sweep(&config, &out, parallel.workers, parallel.timing)?;
            println!("{} cells written to {}", done.len(), out.join("summary.csv").display());
        }
        Command::Solve {
            common,
            threshold,
            solver,
        } => {
            let (config, out) = load(&common)?;
            let solver = solver.as_deref().map(tools::solver_by_name).transpose()?;
            let s = tools::solve(&config, threshold, solver, &out)?;
            match s.gain {
                Some(g) => println!("rho_tilde_star {g}"),
                None => println!("rho_tilde_star unavailable (policy chain is reducible)"),
            }
        }
        Command::Diagnose { probe } => match probe {
            Probe::Hitting {
                common,
                threshold,
                pairs,
                cap,
            } => {
                let (config, out) = load(&common)?;
                let u = threshold.unwrap_or_else(|| config.algo.threshold());
                let p = tools::diagnose_hitting(&config, u, pairs, cap, first_seed(&config), &out)?;
                for r in p.rows.iter().filter(|r| r.unreliable()) {
                    eprintln!("distance {}: every sample hit the cap; unreliable", r.l1_distance);
                }
                println!("{} distance buckets written to {}", p.rows.len(), out.join("hitting.csv").display());
            }
            Probe::Boundary {
                common,
                thresholds,
                slots,
                burn_in,
            } => {
                let (config, out) = load(&common)?;
                let s = tools::diagnose_boundary(&config, &thresholds, slots, burn_in, first_seed(&config), &out)?;
                println!("log-mass slope {} (bootstrap p = {})", s.slope, s.p_value);
            }
            Probe::Oracle {
                common,
                threshold,
                slots,
                burn_in,
            } => {
                let (config, out) = load(&common)?;
                let u = threshold.unwrap_or_else(|| config.algo.threshold());
                let o = tools::diagnose_oracle(&config, u, slots, burn_in, first_seed(&config), &out)?;
                println!(
                    "rho_tilde_star {} piecewise {} [{}, {}]",
                    o.rho_tilde_star, o.piecewise.estimate, o.piecewise.low, o.piecewise.high
                );
            }
            Probe::SampleRequirement {
                delta_p,
                reach,
                threshold,
                queues,
                actions,
                delta,
            } => {
                println!(
                    "{}",
                    tools::diagnose_sample_requirement(delta_p, reach, threshold, queues, actions, delta)?
                );
            }
            Probe::EpisodeBound { slots, budget_scale } => {
                println!("{}", tools::diagnose_episode_bound(slots, budget_scale)?);
            }
        },
        Command::EmitPlotData { run_dir, out, points } => {
            let out = out.unwrap_or_else(|| run_dir.join("plot"));
            let labels = plot::emit_plot_data(&run_dir, &out, points)?;
            println!("{} curves written to {}", labels.len(), out.join("running_avg.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
