use thiserror::Error;

/// Errors surfaced by the calibration and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input file does not match the expected column schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input data violates a physical or structural invariant.
    #[error("data error: {0}")]
    Data(String),

    /// An argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A mathematical operation was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A covariance matrix is singular where a density is required.
    #[error("degenerate covariance: {0}")]
    Degenerate(String),

    /// The sampler could not produce usable draws.
    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
