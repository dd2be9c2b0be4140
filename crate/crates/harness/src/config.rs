//! Experiment configuration files (TOML).
//!
//! A file has an `[env]` table (tagged by `kind`), an `[algo]` table
//! (tagged by `kind`: `rlqn`, `baseline` or `oracle`), optional top-level
//! `seeds`, `stride` and `output`, and for sweeps a `[grid]` table.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rlqn_core::baselines::RULE_NAMES;
use rlqn_core::rlqn::RlqnConfig;
use rlqn_core::solvers::SolverChoice;
use rlqn_core::state::DEFAULT_STATE_CAP;
use rlqn_core::{EnvConfig, Environment, QueueVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Keep every `stride`-th slot in metrics.csv.
    #[serde(default = "default_stride")]
    pub stride: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub env: EnvConfig,
    pub algo: AlgoConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_stride() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgoConfig {
    Rlqn(RlqnParams),
    Baseline(BaselineParams),
    Oracle(OracleParams),
}

impl AlgoConfig {
    pub fn label(&self) -> &'static str {
        match self {
            AlgoConfig::Rlqn(_) => "rlqn",
            AlgoConfig::Baseline(_) => "baseline",
            AlgoConfig::Oracle(_) => "oracle",
        }
    }

    pub fn threshold(&self) -> u32 {
        match self {
            AlgoConfig::Rlqn(p) => p.threshold,
            AlgoConfig::Baseline(p) => p.threshold,
            AlgoConfig::Oracle(p) => p.threshold,
        }
    }

    pub fn with_threshold(&self, threshold: u32) -> AlgoConfig {
        let mut out = self.clone();
        match &mut out {
            AlgoConfig::Rlqn(p) => p.threshold = threshold,
            AlgoConfig::Baseline(p) => p.threshold = threshold,
            AlgoConfig::Oracle(p) => p.threshold = threshold,
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlqnParams {
    pub threshold: u32,
    #[serde(default = "one")]
    pub exploration: f64,
    pub budget_scale: f64,
    pub episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_slots: Option<u64>,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<QueueVector>,
    #[serde(default = "yes")]
    pub warm_start: bool,
    #[serde(default = "default_cap")]
    pub state_cap: usize,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_cap() -> usize {
    DEFAULT_STATE_CAP
}

impl RlqnParams {
    pub fn to_config(&self, seed: u64, record_timing: bool) -> RlqnConfig {
        RlqnConfig {
            threshold: self.threshold,
            exploration: self.exploration,
            budget_scale: self.budget_scale,
            episodes: self.episodes,
            max_slots: self.max_slots,
            solver: self.solver.clone(),
            seed,
            initial_state: self.initial_state.clone(),
            // the harness thins metrics itself
            metrics_stride: 1,
            record_timing,
            warm_start: self.warm_start,
            state_cap: self.state_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineParams {
    /// `stabilizing`, `uniform_random`, or the environment's own rule name.
    #[serde(default = "stabilizing")]
    pub policy: String,
    pub slots: u64,
    /// Extent of the table written to policy.csv.
    #[serde(default = "five")]
    pub threshold: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<QueueVector>,
}

fn stabilizing() -> String {
    "stabilizing".into()
}

fn five() -> u32 {
    5
}

/// Known-dynamics reference: solve the true truncated kernel, then act with
/// the solution inside and the stabilizing rule outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    pub threshold: u32,
    pub slots: u64,
    #[serde(default)]
    pub solver: SolverChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// The `[algo]` block.
    Algo,
    /// The environment's stabilizing rule alone.
    Pi0,
    Oracle,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Algo => "algo",
            Arm::Pi0 => "pi0",
            Arm::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Values of `U`; empty means the `[algo]` threshold only.
    #[serde(default)]
    pub thresholds: Vec<u32>,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    /// Horizon of `pi0` and `oracle` arms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_slots: Option<u64>,
}

fn default_arms() -> Vec<Arm> {
    vec![Arm::Algo]
}

/// Reads `path`, applies `key=value` overrides (dotted keys, TOML values,
/// bare strings accepted) and validates the result.
pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, overrides)
}

pub fn parse(text: &str, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let mut doc: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let config: ExperimentConfig = doc.try_into().map_err(|e| HarnessError::Config(format!("{e}")))?;
    config.validate()?;
    Ok(config)
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), HarnessError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for part in path {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn build_env(&self) -> Result<Box<dyn Environment>, HarnessError> {
        self.env.build().map_err(|e| HarnessError::Config(format!("env: {e}")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let env = self.build_env()?;
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds: at least one seed is required".into()));
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(HarnessError::Config("seeds: values must be distinct".into()));
        }
        if self.stride == 0 {
            return Err(HarnessError::Config("stride: must be at least 1".into()));
        }
        let mut thresholds = vec![self.algo.threshold()];
        if let Some(grid) = &self.grid {
            thresholds.extend(&grid.thresholds);
            if grid.arms.is_empty() {
                return Err(HarnessError::Config("grid.arms: at least one arm is required".into()));
            }
            if grid.arms.iter().any(|a| *a != Arm::Algo) && grid.baseline_slots.is_none() {
                return Err(HarnessError::Config(
                    "grid.baseline_slots: required when the grid has pi0 or oracle arms".into(),
                ));
            }
        }
        for &u in &thresholds {
            let algo = self.algo.with_threshold(u);
            validate_algo(&algo, env.as_ref())?;
        }
        Ok(())
    }

    /// Digest of every experiment field plus the run seed. The output path
    /// is not an experiment field and is left out.
    pub fn digest(&self, seed: u64) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        canonical.seeds = vec![seed];
        let text = toml::to_string(&canonical).expect("configs serialize");
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_initial(state: &Option<QueueVector>, env: &dyn Environment) -> Result<(), HarnessError> {
    match state {
        Some(q) if q.dim() != env.queue_count() => Err(HarnessError::Config(format!(
            "algo.initial_state: {} queues given, environment has {}",
            q.dim(),
            env.queue_count()
        ))),
        _ => Ok(()),
    }
}

pub fn validate_algo(algo: &AlgoConfig, env: &dyn Environment) -> Result<(), HarnessError> {
    if algo.threshold() <= env.max_change() {
        return Err(HarnessError::Config(format!(
            "algo.threshold: U = {} must exceed the per-slot change bound {}",
            algo.threshold(),
            env.max_change()
        )));
    }
    match algo {
        AlgoConfig::Rlqn(p) => {
            check_initial(&p.initial_state, env)?;
            p.to_config(0, false)
                .validate(env)
                .map_err(|e| HarnessError::Config(format!("algo: {e}")))
        }
        AlgoConfig::Baseline(p) => {
            check_initial(&p.initial_state, env)?;
            baseline_rule(&p.policy, env).map(|_| ())
        }
        AlgoConfig::Oracle(_) => Ok(()),
    }
}

/// What a baseline policy name resolves to for a given environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineRule {
    Stabilizing,
    UniformRandom,
}

pub fn baseline_rule(name: &str, env: &dyn Environment) -> Result<BaselineRule, HarnessError> {
    let own = match env.name() {
        "server_allocation" => "longest_queue",
        "routing" => "fixed_path",
        _ => "max_matching",
    };
    match name {
        "stabilizing" => Ok(BaselineRule::Stabilizing),
        "uniform_random" => Ok(BaselineRule::UniformRandom),
        n if n == own => Ok(BaselineRule::Stabilizing),
        n if RULE_NAMES.contains(&n) => Err(HarnessError::Config(format!(
            "algo.policy: `{n}` does not apply to {}; use `{own}`",
            env.name()
        ))),
        n => Err(HarnessError::Config(format!(
            "algo.policy: unknown policy `{n}` (expected stabilizing, uniform_random or {own})"
        ))),
    }
}
