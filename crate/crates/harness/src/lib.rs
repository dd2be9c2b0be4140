//! Experiment runner behind the `rlqn` command.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod output;
pub mod plot;
pub mod runner;
pub mod tools;

pub use config::{AlgoConfig, Arm, ExperimentConfig};
pub use runner::{run, run_cell, sweep, CellOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_SWEEP: i32 = 4;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "RLQN_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} sweep cells failed")]
    SweepFailed { failed: usize, total: usize },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::MissingInput(_) => EXIT_CONFIG,
            HarnessError::Runtime(_) | HarnessError::Io { .. } => EXIT_RUNTIME,
            HarnessError::SweepFailed { .. } => EXIT_SWEEP,
        }
    }
}
