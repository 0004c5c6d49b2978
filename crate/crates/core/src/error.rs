use thiserror::Error;

/// Errors raised by the capacity-classification library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid split plan: parts sum to {got}, dataset has {expected} rows")]
    InvalidPlan { expected: usize, got: usize },

    #[error("invalid capacity: {0}")]
    InvalidCapacity(String),

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("class {0} has no rows in the training data")]
    MissingClass(u8),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no feasible configuration: {0}")]
    Infeasible(String),

    #[error("{what} did not converge (residual {residual:e})")]
    NonConvergence { what: &'static str, residual: f64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown label value {value:?} at row {row}")]
    UnknownLabel { row: usize, value: String },

    #[error("insufficient rows: need {needed} of class {class}, have {available}")]
    InsufficientClassCount {
        class: u8,
        needed: usize,
        available: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of an iterative numerical routine.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
