use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configs, paths or file contents supplied by the operator.
    #[error("{0}")]
    Validation(String),
    #[error("corrupt dataset {path}: expected {expected} bytes, got {actual}")]
    CorruptDataset { path: PathBuf, expected: u64, actual: u64 },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] sparse_shift::Error),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    /// Process exit status: 1 for rejected input, 2 for failures while doing the work.
    pub fn exit_code(&self) -> i32 {
        use sparse_shift::Error as E;
        match self {
            CliError::Validation(_) | CliError::CorruptDataset { .. } | CliError::Checkpoint { .. } => 1,
            CliError::Io { .. } => 2,
            CliError::Core(E::TrainingDiverged { .. } | E::NonFiniteLoss(_) | E::BackwardBeforeForward) => 2,
            CliError::Core(_) => 1,
        }
    }
}
