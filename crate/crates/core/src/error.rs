use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are grouped by the process exit code they map to in the CLI:
/// configuration problems (2), bad or missing input data (3) and numeric
/// failures such as NaN during training (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error("insufficient data in {what}: {msg}")]
    InsufficientData { what: String, msg: String },

    #[error("rate alignment error: no rate for date {date}")]
    Alignment { date: String },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("invalid split: holdout {holdout} must be in [1, {len})")]
    InvalidSplit { holdout: usize, len: usize },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape { what: String, expected: String, got: String },

    #[error("window error: {0}")]
    Window(String),

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("search budget exhausted after {completed} completed trials")]
    BudgetExhausted { completed: usize },

    #[error("numeric failure at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("rank deficient design: {0}")]
    Rank(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::InsufficientData { .. }
            | Error::Alignment { .. }
            | Error::MissingInput(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::Numeric { .. } | Error::Rank(_) => 4,
            Error::InvalidSplit { .. }
            | Error::Shape { .. }
            | Error::Window(_)
            | Error::State(_)
            | Error::Config(_)
            | Error::BudgetExhausted { .. } => 2,
        }
    }
}
