//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Explicit time step violates the diffusion stability bound.
    #[error("unstable time step: dt = {dt:.3e} s exceeds limit {dt_max:.3e} s")]
    UnstableStep { dt: f64, dt_max: f64 },

    /// The solver ran out of track before the melt pool settled.
    #[error("simulation did not reach quasi-steady state: {0}")]
    NonConvergence(String),

    /// Melt-pool quantities requested for a field with no molten region.
    #[error("melt pool undefined: {0}")]
    ColdPool(String),

    /// Array or grid shape mismatch.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// Bad configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A loss or objective stopped being a number.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Serialized container is damaged or from another format version.
    #[error("container format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::UnstableStep { .. } => "unstable_step",
            Error::NonConvergence(_) => "non_convergence",
            Error::ColdPool(_) => "cold_pool",
            Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::NonFinite(_) => "non_finite",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
