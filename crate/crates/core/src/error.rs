use thiserror::Error;

/// Failures surfaced by the solvers and file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be decoded; `field` names the offending entry.
    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    /// Decoded data (or caller input) violates a model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// The problem is too large for the requested solver.
    #[error("size guard: {0}")]
    Guard(String),

    /// A linear solve or fixed-point iteration failed to reach tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The action is not in the feasible set of the state.
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
