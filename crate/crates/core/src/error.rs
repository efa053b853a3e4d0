use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition matrix must be square with at least 2 modes (got {rows}x{cols})")]
    BadShape { rows: usize, cols: usize },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSumNotOne { row: usize, sum: f64 },
    #[error("mode {mode} out of range 1..={d}")]
    ModeOutOfRange { mode: usize, d: usize },
    #[error("Wasserstein divergence requires a distance kernel")]
    MissingKernel,
    #[error("invalid distance kernel: {0}")]
    InvalidKernel(String),
    #[error("confidence level {beta_bar} must lie strictly below the violation rate {alpha}")]
    BetaNotBelowAlpha { alpha: f64, beta_bar: f64 },
    #[error("invalid confidence schedule: {0}")]
    InvalidSchedule(String),
    #[error("scenario tree with {nodes} nodes exceeds the node budget {budget}")]
    TreeTooLarge { nodes: u128, budget: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("optimal control problem infeasible at step {step}")]
    StepInfeasible { step: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
