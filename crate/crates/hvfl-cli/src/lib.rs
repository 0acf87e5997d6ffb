//! Experiment orchestration for the hybrid federated learning simulator:
//! config parsing and validation, single runs, paired-seed comparisons,
//! and plot-data emission.

pub mod compare;
pub mod config;
pub mod plot;
pub mod runner;

use thiserror::Error;

/// CLI-level failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run diverged: {0}")]
    Divergence(String),
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}
