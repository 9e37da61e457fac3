//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by instance loading, configuration validation, and
/// optimization runs.
#[derive(Debug, Error)]
pub enum Error {
    /// A problem instance failed structural validation. The message names
    /// the offending entry (feature key, dataset index, or field).
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// A run or experiment configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An operation was asked for something only defined on 1-D instances.
    #[error("requires a 1-D instance: {0}")]
    NotScalar(String),

    /// An optimality estimate needed for the requested computation is
    /// missing (e.g. no f*_Mix entry for the requested lambda, or a
    /// MAXRIGHT run started without per-objective optima).
    #[error("missing optimum estimate: {0}")]
    MissingOptimum(String),

    /// A loss, gradient, or iterate became non-finite during optimization.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A rate fit was requested on gaps that are not strictly positive,
    /// or on a grid too small/narrow to support a log-log fit.
    #[error("rate fit not defined: {0}")]
    RateFit(String),

    /// Input/output failure (instance files, trajectory exports).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
