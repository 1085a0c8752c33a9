//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failure modes of the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or structural parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A frequency or spatial point lies outside the admissible domain.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// The frequency grid is too coarse for the requested spatial scale.
    #[error("frequency spacing {spacing:.4e} is coarser than the required {required:.4e}")]
    CoarseGrid { spacing: f64, required: f64 },

    /// A requested region does not align with the sampling lattice.
    #[error("region not aligned with the sampling grid: {0}")]
    Misaligned(String),

    /// A tuple of directions fails the transversality threshold.
    #[error("transversality volume {volume:.4e} is below the threshold {threshold:.4e}")]
    NotTransverse { volume: f64, threshold: f64 },

    /// An operation received an empty collection where content is required.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Least-squares fitting cannot proceed on the supplied data.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// A computed audit quantity contradicts a guaranteed bound.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Malformed serialized data.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
