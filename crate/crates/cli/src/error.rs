//! Process-level failure classification.
//!
//! Exit statuses: 0 success, 1 validation error (bad config, bad
//! arguments, unresolvable instance), 2 runtime failure (I/O, divergence),
//! 3 acceptance-threshold failure (a reproduction or verification check
//! did not meet its stated bound).

use duopt_core::Error as CoreError;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_THRESHOLD: u8 = 3;

/// A command failure carrying the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }
}

/// Map a library error onto the exit-status contract: malformed inputs
/// and unsatisfiable requests are validation errors; I/O and numerical
/// breakdown during execution are runtime failures.
pub fn classify(error: CoreError) -> Failure {
    match &error {
        CoreError::InvalidInstance(_)
        | CoreError::InvalidConfig(_)
        | CoreError::NotScalar(_)
        | CoreError::MissingOptimum(_)
        | CoreError::Json(_) => Failure::validation(error),
        CoreError::Io(_) | CoreError::NonFinite(_) | CoreError::RateFit(_) => {
            Failure::runtime(error)
        }
    }
}
