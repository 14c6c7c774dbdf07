//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file (ragged CSV rows, unparsable header, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Input parsed but carries unusable data (non-finite values, missing file).
    #[error("data error: {0}")]
    Data(String),

    /// A precondition on a design, allocation or configuration failed.
    #[error("validation error: {0}")]
    Validation(String),

    /// A population moment is undefined (e.g. covariance of a single unit).
    #[error("undefined moment: {0}")]
    UndefinedMoment(String),

    /// Correlation requested where a variance vanishes.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Estimator undefined on the realized sample (empty stratum sample).
    #[error("undefined estimator: {0}")]
    UndefinedEstimator(String),

    /// A change estimate has no surviving overlap between the two samples.
    #[error("degenerate overlap: {0}")]
    DegenerateOverlap(String),

    /// Exact enumeration was requested on an instance too large to enumerate.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Argument outside its admissible range.
    #[error("range error: {0}")]
    Range(String),

    /// Configuration file could not be read or does not validate.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 2 config/validation, 3 data, 4 capacity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Range(_) => 2,
            Error::Format(_) | Error::Data(_) | Error::Io(_) => 3,
            Error::Capacity(_) => 4,
            _ => 2,
        }
    }
}
