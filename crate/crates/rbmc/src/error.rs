//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or routine received an out-of-range or inconsistent parameter.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// An interaction energy was evaluated at (or too close to) a singularity.
    #[error("singular interaction evaluated at zero separation")]
    Singularity,

    /// A charge layout cannot be realized (e.g. non-positive species charge).
    #[error("infeasible charge configuration: {0}")]
    InfeasibleCharge(String),

    /// A fixed-point iteration stopped before reaching the requested tolerance.
    #[error("fixed-point iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    /// A sample container was empty where at least one configuration is required.
    #[error("empty sample stream")]
    EmptySampleStream,

    /// Positions, gradients or grids with incompatible dimensions were combined.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A run configuration failed to parse or validate. Reported before any compute starts.
    #[error("config error ({location}): {message}")]
    Config { location: String, message: String },

    /// A requested combination is deliberately not implemented.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A numeric operation produced a non-finite or otherwise unusable value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Helper for the common parameter-validation pattern.
    pub fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }

    /// Helper for config errors with a `section.key`-style location.
    pub fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { location: location.into(), message: message.into() }
    }

    /// True for errors that indicate a bad run configuration rather than a runtime failure.
    /// The CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
