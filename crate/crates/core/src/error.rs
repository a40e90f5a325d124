//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch shapes are incompatible.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A file did not match its expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// A configuration value is invalid or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Dataset generation could not satisfy its constraints.
    #[error("generation failed: {0}")]
    Generation(String),

    /// Sampling was requested from an empty OOD memory queue.
    #[error("empty queue: {0}")]
    EmptyQueue(&'static str),

    /// A metric is undefined on the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A checkpoint could not be written or restored.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A numeric invariant was violated at runtime (NaN/Inf).
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
