use std::path::PathBuf;

use thiserror::Error;

/// Errors from the pure control laws.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("non-finite input `{0}`")]
    NonFinite(&'static str),
    #[error("input `{0}` must be > 0")]
    NonPositive(&'static str),
    #[error("CACC evaluated without a predecessor feedforward")]
    MissingFeedforward,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("negative {0} recorded for an edge traversal")]
    Negative(&'static str),
    #[error("run produced no measured traversal distance")]
    EmptyRun,
}

/// Failures that abort a simulation run.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("spawn queue at entry `{entry}` exceeded {limit} waiting vehicles at t={t:.1}s")]
    SpawnQueueOverflow { entry: String, limit: usize, t: f64 },
    #[error("collision at t={t:.1}s between vehicles {follower} and {leader}")]
    Collision { t: f64, follower: u64, leader: u64 },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0} batch run(s) failed")]
    BatchFailures(usize),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }

    /// Process exit status for the CLI: 1 for configuration errors, 2 for
    /// runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 1,
            _ => 2,
        }
    }
}
