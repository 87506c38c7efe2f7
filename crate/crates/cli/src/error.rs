use std::path::PathBuf;

use svsr_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("numerical abort at iteration {iteration}: {reason}")]
    Aborted { iteration: usize, reason: String },

    #[error("every ablation run failed")]
    AllFailed,

    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn output(path: impl Into<PathBuf>, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        CliError::Output {
            path: path.into(),
            source: source.into(),
        }
    }

    /// 2 for bad input or configuration, 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Config { .. } => 2,
            CliError::Core(CoreError::NonFinite { .. }) => 3,
            CliError::Core(_) => 2,
            CliError::Aborted { .. } | CliError::AllFailed => 3,
            CliError::Output { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
