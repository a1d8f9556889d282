//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures surfaced while building models or fitting them to data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("data validation failed: {0}")]
    Validation(String),
    #[error("subject {subject} is infeasible: {reason}")]
    Infeasible { subject: String, reason: String },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    #[error("proposal degeneracy for subject {subject} (k-hat {khat}): {reason}")]
    Degenerate {
        subject: String,
        khat: String,
        reason: String,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Infeasible { .. } | Error::Config(_) | Error::Parse(_) => 2,
            Error::Numerical(_) | Error::Degenerate { .. } | Error::Domain(_) => 3,
            Error::NonConvergence(_) => 4,
            Error::Io(_) => 2,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
