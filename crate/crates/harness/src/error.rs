use std::path::PathBuf;

use mcds_tensor::checkpoint::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("checkpoint {path} is incompatible: {reason}")]
    CheckpointIncompatible { path: PathBuf, reason: String },
    #[error("cannot write to {path}")]
    OutputDirUnwritable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] mcds_core::Error),
    #[error(transparent)]
    Surrogate(#[from] mcds_surrogate::Error),
    #[error(transparent)]
    Search(#[from] mcds_mcts::Error),
    #[error("I/O on {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("JSON in {path}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("CSV output")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for everything
    /// that went wrong while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::ConfigInvalid(_) => 2,
            Error::Json { .. } => 2,
            Error::Search(mcds_mcts::Error::ConfigInvalid(_)) => 2,
            Error::Core(mcds_core::Error::ConfigInvalid(_)) => 2,
            Error::Surrogate(mcds_surrogate::Error::ConfigInvalid(_)) => 2,
            _ => 3,
        }
    }

    /// Maps checkpoint format and shape errors to `CheckpointIncompatible`.
    pub(crate) fn from_checkpoint(path: &std::path::Path, e: mcds_surrogate::Error) -> Self {
        match e {
            mcds_surrogate::Error::Checkpoint(
                c @ (CheckpointError::UnsupportedVersion { .. }
                | CheckpointError::BadMagic
                | CheckpointError::Incompatible(_)),
            ) => Error::CheckpointIncompatible {
                path: path.to_path_buf(),
                reason: c.to_string(),
            },
            other => other.into(),
        }
    }
}

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn unwritable(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::OutputDirUnwritable { path, source }
}
