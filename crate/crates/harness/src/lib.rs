//! Experiment harness: configuration, deterministic grid search, metric
//! evaluation over seeds/start points/events, and result export.

use thiserror::Error;

pub mod config;
pub mod data;
pub mod depth;
pub mod export;
pub mod grid;
pub mod run;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Dynamics(#[from] qrc_core::dynamics::DynamicsError),
    #[error(transparent)]
    Reservoir(#[from] qrc_core::reservoir::ReservoirError),
    #[error(transparent)]
    Quantum(#[from] qrc_core::quantum::QuantumError),
    #[error(transparent)]
    Metrics(#[from] qrc_core::metrics::MetricsError),
    #[error("{0}")]
    Protocol(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl HarnessError {
    /// CLI exit code: 2 for configuration problems, 3 for numeric or
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}
