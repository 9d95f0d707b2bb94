//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structured-text input could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A scenario or plan field violates an invariant. `field` is the
    /// dotted path of the offending entry.
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    /// A numeric routine was called outside its domain.
    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    /// The requested plan cannot satisfy the flight or rate constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Conic solve ended without a usable primal point.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Surrogate training failed to make progress.
    #[error("training diverged: {0}")]
    Training(String),

    /// Weight-file container problems (version, dimensions, scheme tag).
    #[error("weight file error: {0}")]
    WeightFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
