//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by inference, fitting, and model construction.
#[derive(Debug, Error)]
pub enum Error {
    /// Distribution parameters outside their domain (non-finite or non-positive).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A value outside its documented domain (e.g. occupation outside [0, 1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Weighted moment fit received weights that sum to zero (or below floor).
    #[error("degenerate weights: sum of weights is {sum}")]
    DegenerateWeights { sum: f64 },

    /// A numerical quantity became non-finite where it must be finite.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An input violated a structural invariant (e.g. unnormalized masses).
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// Two grids that must share nodes do not.
    #[error("grid mismatch: expected {expected} nodes, got {got}")]
    GridMismatch { expected: usize, got: usize },

    /// Network architecture and tensor shapes disagree.
    #[error("architecture error: {0}")]
    Architecture(String),

    /// A required configuration item (e.g. trained weights) is missing.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Training diverged; carries the epoch/batch trace of the failure.
    #[error("training failure at epoch {epoch}, batch {batch}: {message}")]
    TrainingFailure {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// Curve fit could not identify parameters (e.g. all points equal).
    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    /// Weight-file parsing failed (bad magic, version, or corruption).
    #[error("weight format error: {0}")]
    WeightFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
