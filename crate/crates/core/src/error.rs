use std::path::PathBuf;

use thiserror::Error;

use crate::lp::LpError;

/// Errors raised by the library. Each variant maps onto one failure class
/// that callers (the CLI in particular) treat differently.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("instrument support error: {0}")]
    Support(String),

    #[error("empty stratum: {0}")]
    Stratum(String),

    #[error("instrument relevance fails: propensities are identical across all levels")]
    Relevance,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("linear program solver failed: {0}")]
    SolverFailure(String),

    #[error(transparent)]
    Lp(#[from] LpError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
