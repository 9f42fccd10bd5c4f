use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] qtebounds::Error),

    #[error("cannot read config file {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config file {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("{} already exists; pass --force to overwrite", path.display())]
    OutputExists { path: PathBuf },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot serialize output: {0}")]
    Serialize(String),
}

impl CliError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        CliError::Core(qtebounds::Error::Config {
            field: field.to_string(),
            message: message.into(),
        })
    }

    /// 1 usage or configuration, 2 data, 3 substantive finding, 4 solver.
    pub fn exit_code(&self) -> i32 {
        use qtebounds::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Argument(_) | E::Config { .. } => 1,
                E::Io { .. }
                | E::Parse { .. }
                | E::Support(_)
                | E::Stratum(_)
                | E::Relevance
                | E::DiagnosticUnavailable(_) => 2,
                E::Experiment(_) => 3,
                E::SolverFailure(_) | E::Lp(_) => 4,
            },
            CliError::ConfigRead { .. }
            | CliError::ConfigParse { .. }
            | CliError::Usage(_)
            | CliError::OutputExists { .. } => 1,
            CliError::Write { .. } => 2,
            CliError::Serialize(_) => 4,
        }
    }
}
