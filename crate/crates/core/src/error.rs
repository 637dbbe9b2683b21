//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in input matrix: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("collinear design: {0}")]
    Collinear(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("unbalanced panel: first missing observation is (unit={unit}, time={time})")]
    UnbalancedPanel { unit: String, time: String },

    #[error("duplicate observation for (unit={unit}, time={time})")]
    DuplicateObservation { unit: String, time: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for input problems, 3 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_)
            | Error::DimensionMismatch(_)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::UnbalancedPanel { .. }
            | Error::DuplicateObservation { .. }
            | Error::Io(_)
            | Error::Csv(_) => 2,
            Error::Collinear(_) | Error::Numerical(_) => 3,
        }
    }

    /// Short machine-readable kind tag used in CLI error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non_finite",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Collinear(_) => "collinear",
            Error::Numerical(_) => "numerical",
            Error::Parse { .. } => "parse",
            Error::UnbalancedPanel { .. } => "unbalanced_panel",
            Error::DuplicateObservation { .. } => "duplicate_observation",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
