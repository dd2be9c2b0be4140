//! The episodic learner.
//!
//! Episode `k` explores with probability `ell / sqrt(k)`: uniform random
//! actions on the truncated space, the stabilizing rule outside it. Otherwise
//! it exploits: the counts become an empirical kernel, the kernel is solved,
//! and the resulting policy acts on the inner region with the stabilizing
//! rule outside. Either way the episode runs until the inner region has been
//! visited `ceil(L * sqrt(k))` times, and every slot that starts inside the
//! truncated space updates the counts.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counts::{counts_to_kernel, CountsError, TransitionCounts};
use crate::envs::{truncated_reachable, Environment};
use crate::mdp::FiniteMdp;
use crate::policy::PiecewisePolicy;
use crate::rng::{stream, SimRng};
use crate::solvers::{cmu_solve, service_rates_from_counts, CmuRule, SolveError, SolveResult, SolverChoice};
use crate::state::{total_backlog, ActionId, Partition, QueueVector, StateError, StateSpace, DEFAULT_STATE_CAP};

/// Slots per unit of budget after which an episode is declared stuck.
pub const WATCHDOG_FACTOR: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum RlqnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("episode {episode}: {source}")]
    Solve {
        episode: usize,
        #[source]
        source: SolveError,
    },
    #[error("episode {episode}: {source}")]
    Counts {
        episode: usize,
        #[source]
        source: CountsError,
    },
    #[error("episode {episode} ran {slots} slots with {visits} of {budget} inner visits; the fallback policy did not bring the chain back")]
    Unstable {
        episode: usize,
        slots: u64,
        visits: u64,
        budget: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlqnConfig {
    /// Truncation threshold `U`; must exceed the environment's `W`.
    pub threshold: u32,
    /// Exploration scale `ell` in `(0, 1]`.
    #[serde(default = "default_ell")]
    pub exploration: f64,
    /// Episode budget scale `L > 0`.
    pub budget_scale: f64,
    /// Episode count `K`.
    pub episodes: usize,
    /// Stop after the episode in which this many slots have elapsed.
    #[serde(default)]
    pub max_slots: Option<u64>,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the zero vector.
    #[serde(default)]
    pub initial_state: Option<QueueVector>,
    /// Emit every `metrics_stride`-th slot; 0 disables per-slot metrics.
    #[serde(default)]
    pub metrics_stride: u64,
    /// Measure wall time of each solve. Off by default so records are
    /// reproducible bit for bit.
    #[serde(default)]
    pub record_timing: bool,
    /// Seed each solve with the previous solution.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default = "default_cap")]
    pub state_cap: usize,
}

fn default_ell() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_cap() -> usize {
    DEFAULT_STATE_CAP
}

impl RlqnConfig {
    pub fn new(threshold: u32, budget_scale: f64, episodes: usize) -> Self {
        RlqnConfig {
            threshold,
            exploration: 1.0,
            budget_scale,
            episodes,
            max_slots: None,
            solver: SolverChoice::default(),
            seed: 0,
            initial_state: None,
            metrics_stride: 0,
            record_timing: false,
            warm_start: true,
            state_cap: DEFAULT_STATE_CAP,
        }
    }

    pub fn validate(&self, env: &dyn Environment) -> Result<(), RlqnError> {
        if !(self.exploration > 0.0 && self.exploration <= 1.0) {
            return Err(RlqnError::Config(format!("exploration {} is outside (0, 1]", self.exploration)));
        }
        if !(self.budget_scale > 0.0 && self.budget_scale.is_finite()) {
            return Err(RlqnError::Config(format!("budget_scale {} must be positive", self.budget_scale)));
        }
        if self.episodes == 0 {
            return Err(RlqnError::Config("episodes must be at least 1".into()));
        }
        if self.threshold <= env.max_change() {
            return Err(StateError::ThresholdTooSmall {
                threshold: self.threshold,
                max_change: env.max_change(),
            }
            .into());
        }
        if let Some(q) = &self.initial_state {
            if q.dim() != env.queue_count() {
                return Err(RlqnError::Config(format!(
                    "initial_state has {} queues, environment has {}",
                    q.dim(),
                    env.queue_count()
                )));
            }
        }
        if matches!(self.solver, SolverChoice::Cmu) && env.name() != "server_allocation" {
            return Err(RlqnError::Config("the cmu solver only applies to server allocation".into()));
        }
        Ok(())
    }
}

/// `ell / sqrt(k)`.
pub fn epsilon_k(ell: f64, k: usize) -> f64 {
    ell / (k as f64).sqrt()
}

/// `ceil(L * sqrt(k))` inner-region visits.
pub fn episode_budget(budget_scale: f64, k: usize) -> u64 {
    (budget_scale * (k as f64).sqrt()).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Explore,
    Exploit,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Explore => "EXPLORE",
            Mode::Exploit => "EXPLOIT",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub k: usize,
    pub mode: Mode,
    /// Slots the episode lasted, `L'_k`.
    pub length: u64,
    pub inner_visits: u64,
    /// Sum of total backlog over the episode's slots.
    pub backlog_sum: u64,
    pub epsilon: f64,
    pub policy_changed: bool,
    pub resolve_time: Option<Duration>,
    /// Slots elapsed before the episode started.
    pub start_slot: u64,
}

impl EpisodeRecord {
    pub fn episodic_avg_backlog(&self) -> f64 {
        self.backlog_sum as f64 / self.length as f64
    }
}

/// One thinned per-slot sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// 1-based slot index.
    pub t: u64,
    pub total_backlog: u64,
    /// Sum of total backlog over slots `1..=t`.
    pub cumulative_backlog: u64,
    pub running_avg: f64,
    pub episode: usize,
    pub mode: Mode,
}

/// The learner's policy after its last episode.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnedPolicy {
    /// Action per truncated state id, with the solve that produced it.
    Table { solve: SolveResult },
    Cmu(CmuRule),
}

impl LearnedPolicy {
    pub fn action(&self, space: &StateSpace, q: &[u32]) -> Option<ActionId> {
        match self {
            LearnedPolicy::Table { solve } => space.index_of(q).map(|id| solve.policy[id]),
            LearnedPolicy::Cmu(rule) => Some(rule.decide(q)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_policy: LearnedPolicy,
    pub episodes: Vec<EpisodeRecord>,
    pub total_slots: u64,
    pub cumulative_backlog: u64,
    pub final_state: QueueVector,
    pub counts: TransitionCounts,
    pub space: StateSpace,
    pub partition: Partition,
}

impl RunOutcome {
    /// Average total backlog over every slot of the run.
    pub fn running_avg(&self) -> f64 {
        self.cumulative_backlog as f64 / self.total_slots.max(1) as f64
    }
}

struct Exploited {
    table: Arc<Vec<ActionId>>,
    values: Vec<f64>,
    updates: u64,
    solve: SolveResult,
}

/// Runs the learner against one environment. All randomness comes from
/// three streams derived from `config.seed`: `schedule` for the
/// explore/exploit draws, `policy` for random actions and `dynamics` for the
/// environment.
pub struct Learner<'a> {
    env: &'a dyn Environment,
    config: RlqnConfig,
    space: StateSpace,
    partition: Partition,
    reachable: Option<Vec<Vec<usize>>>,
    counts: TransitionCounts,
    schedule_rng: SimRng,
    policy_rng: SimRng,
    dynamics_rng: SimRng,
    state: Vec<u32>,
    slot: u64,
    cumulative: u64,
    last: Option<Exploited>,
    last_cmu: Option<CmuRule>,
    last_backlog: u64,
}

impl<'a> Learner<'a> {
    pub fn new(env: &'a dyn Environment, config: RlqnConfig) -> Result<Self, RlqnError> {
        config.validate(env)?;
        let partition = Partition::new(config.threshold, env.max_change())?;
        let (space, reachable) = match config.solver {
            SolverChoice::Cmu => (StateSpace::new(env.queue_count(), config.threshold, usize::MAX)?, None),
            _ => {
                let space = StateSpace::new(env.queue_count(), config.threshold, config.state_cap)?;
                let reach = truncated_reachable(env, &space);
                (space, Some(reach))
            }
        };
        let state = config
            .initial_state
            .as_ref()
            .map(|q| q.as_slice().to_vec())
            .unwrap_or_else(|| vec![0; env.queue_count()]);
        Ok(Learner {
            env,
            space,
            partition,
            reachable,
            counts: TransitionCounts::new(env.action_count()),
            schedule_rng: stream(config.seed, "schedule", 0),
            policy_rng: stream(config.seed, "policy", 0),
            dynamics_rng: stream(config.seed, "dynamics", 0),
            state,
            slot: 0,
            cumulative: 0,
            last: None,
            last_cmu: None,
            last_backlog: 0,
            config,
        })
    }

    pub fn counts(&self) -> &TransitionCounts {
        &self.counts
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Empirical kernel of the current counts.
    pub fn estimated_kernel(&self) -> Result<FiniteMdp, CountsError> {
        let reach = self
            .reachable
            .as_ref()
            .expect("table solvers enumerate the truncated space");
        counts_to_kernel(&self.counts, reach, &self.space)
    }

    /// Cold-start solve of the current empirical kernel; a pure function of
    /// the counts.
    pub fn solve_estimate(&self) -> Result<SolveResult, RlqnError> {
        let mdp = self.estimated_kernel().map_err(|source| RlqnError::Counts { episode: 0, source })?;
        solve_estimated(&self.config.solver, &mdp, None).map_err(|source| RlqnError::Solve { episode: 0, source })
    }

    /// Draws the episode mode and assembles its policy. Returns the mode,
    /// the policy, whether the learned part changed since the previous
    /// exploitation, and the solve time when timing is on.
    pub fn select_episode_policy(
        &mut self,
        k: usize,
    ) -> Result<(Mode, PiecewisePolicy, bool, Option<Duration>), RlqnError> {
        let xi: f64 = self.schedule_rng.gen();
        if xi <= epsilon_k(self.config.exploration, k) {
            return Ok((Mode::Explore, PiecewisePolicy::exploration(self.space, self.partition), false, None));
        }
        let started = self.config.record_timing.then(Instant::now);
        if let SolverChoice::Cmu = self.config.solver {
            let rule = cmu_solve(&service_rates_from_counts(&self.counts, &self.space));
            let changed = self.last_cmu.as_ref().map_or(true, |prev| {
                // compare decisions, not raw estimates
                prev.rates().iter().zip(rule.rates()).any(|(a, b)| a != b)
            });
            self.last_cmu = Some(rule.clone());
            let elapsed = started.map(|s| s.elapsed());
            return Ok((
                Mode::Exploit,
                PiecewisePolicy::with_cmu(rule, self.space, self.partition),
                changed,
                elapsed,
            ));
        }
        let updates = self.counts.total_updates();
        if let Some(last) = &self.last {
            if last.updates == updates {
                let policy = PiecewisePolicy::exploitation(last.table.clone(), self.space, self.partition);
                return Ok((Mode::Exploit, policy, false, started.map(|s| s.elapsed())));
            }
        }
        let mdp = self
            .estimated_kernel()
            .map_err(|source| RlqnError::Counts { episode: k, source })?;
        let warm = if self.config.warm_start {
            self.last.as_ref().map(|l| l.values.as_slice())
        } else {
            None
        };
        let solve = solve_estimated(&self.config.solver, &mdp, warm).map_err(|source| RlqnError::Solve { episode: k, source })?;
        let changed = self.last.as_ref().map_or(true, |l| l.table.as_slice() != solve.policy.as_slice());
        let table = Arc::new(solve.policy.clone());
        self.last = Some(Exploited {
            table: table.clone(),
            values: solve.values.clone(),
            updates,
            solve,
        });
        let elapsed = started.map(|s| s.elapsed());
        Ok((
            Mode::Exploit,
            PiecewisePolicy::exploitation(table, self.space, self.partition),
            changed,
            elapsed,
        ))
    }

    /// Acts with `policy` until the inner region has been visited `budget`
    /// times, updating counts for every slot that starts in the truncated
    /// space.
    pub fn run_episode(
        &mut self,
        k: usize,
        mode: Mode,
        policy: &PiecewisePolicy,
        budget: u64,
        sink: &mut dyn FnMut(&MetricsRow),
    ) -> Result<EpisodeRecord, RlqnError> {
        let start_slot = self.slot;
        let stride = self.config.metrics_stride;
        let watchdog = budget.saturating_mul(WATCHDOG_FACTOR);
        let mut visits = 0u64;
        let mut length = 0u64;
        let mut backlog_sum = 0u64;
        while visits < budget {
            if length >= watchdog {
                return Err(RlqnError::Unstable {
                    episode: k,
                    slots: length,
                    visits,
                    budget,
                });
            }
            let backlog = total_backlog(&self.state);
            self.last_backlog = backlog;
            self.slot += 1;
            self.cumulative += backlog;
            if stride > 0 && (self.slot - 1) % stride == 0 {
                sink(&MetricsRow {
                    t: self.slot,
                    total_backlog: backlog,
                    cumulative_backlog: self.cumulative,
                    running_avg: self.cumulative as f64 / self.slot as f64,
                    episode: k,
                    mode,
                });
            }
            if self.partition.is_inner(&self.state) {
                visits += 1;
            }
            let action = policy.decide(&self.state, self.env, &mut self.policy_rng);
            let from = self.space.index_of(&self.state);
            self.env.step_in_place(&mut self.state, action, &mut self.dynamics_rng);
            if let Some(s) = from {
                self.counts
                    .record(s, action.index(), self.space.truncated_index(&self.state));
            }
            length += 1;
            backlog_sum += backlog;
        }
        Ok(EpisodeRecord {
            k,
            mode,
            length,
            inner_visits: visits,
            backlog_sum,
            epsilon: epsilon_k(self.config.exploration, k),
            policy_changed: false,
            resolve_time: None,
            start_slot,
        })
    }

    /// Runs up to `K` episodes (fewer if `max_slots` is reached) and returns
    /// the learned policy estimated from the final counts.
    pub fn run(mut self, sink: &mut dyn FnMut(&MetricsRow)) -> Result<RunOutcome, RlqnError> {
        let mut episodes = Vec::with_capacity(self.config.episodes);
        let mut last_row_slot = 0;
        let mut wrapped = |row: &MetricsRow| {
            last_row_slot = row.t;
            sink(row)
        };
        for k in 1..=self.config.episodes {
            let (mode, policy, changed, elapsed) = self.select_episode_policy(k)?;
            let budget = episode_budget(self.config.budget_scale, k);
            let mut record = self.run_episode(k, mode, &policy, budget, &mut wrapped)?;
            record.policy_changed = changed;
            record.resolve_time = elapsed;
            episodes.push(record);
            if self.config.max_slots.is_some_and(|cap| self.slot >= cap) {
                break;
            }
        }
        if self.config.metrics_stride > 0 && last_row_slot != self.slot && self.slot > 0 {
            let last = episodes.last().expect("at least one episode ran");
            sink(&MetricsRow {
                t: self.slot,
                total_backlog: self.last_backlog,
                cumulative_backlog: self.cumulative,
                running_avg: self.cumulative as f64 / self.slot as f64,
                episode: last.k,
                mode: last.mode,
            });
        }
        let final_policy = match self.config.solver {
            SolverChoice::Cmu => LearnedPolicy::Cmu(cmu_solve(&service_rates_from_counts(&self.counts, &self.space))),
            _ => {
                let k = episodes.len();
                let updates = self.counts.total_updates();
                match &self.last {
                    Some(last) if last.updates == updates => LearnedPolicy::Table {
                        solve: last.solve.clone(),
                    },
                    _ => {
                        let mdp = self
                            .estimated_kernel()
                            .map_err(|source| RlqnError::Counts { episode: k, source })?;
                        let warm = if self.config.warm_start {
                            self.last.as_ref().map(|l| l.values.as_slice())
                        } else {
                            None
                        };
                        let solve = solve_estimated(&self.config.solver, &mdp, warm)
                            .map_err(|source| RlqnError::Solve { episode: k, source })?;
                        LearnedPolicy::Table { solve }
                    }
                }
            }
        };
        Ok(RunOutcome {
            final_policy,
            episodes,
            total_slots: self.slot,
            cumulative_backlog: self.cumulative,
            final_state: QueueVector::new(self.state.clone()),
            counts: self.counts,
            space: self.space,
            partition: self.partition,
        })
    }
}

/// Solves an estimated model. Sparse counts can make the estimate
/// multichain, where relative value iteration cannot settle on a single
/// gain; the greedy policy it reports then stands in, with no gain and no
/// bias (so the next solve starts cold).
pub fn solve_estimated(solver: &SolverChoice, mdp: &FiniteMdp, warm: Option<&[f64]>) -> Result<SolveResult, SolveError> {
    match solver.solve(mdp, warm) {
        Err(SolveError::Multichain {
            spread,
            iterations,
            policy,
        }) => Ok(SolveResult {
            policy,
            values: Vec::new(),
            gain: None,
            iterations,
            residual: spread,
        }),
        other => other,
    }
}

/// Convenience wrapper: builds a learner and runs it, discarding metrics.
pub fn run(env: &dyn Environment, config: RlqnConfig) -> Result<RunOutcome, RlqnError> {
    Learner::new(env, config)?.run(&mut |_| {})
}
