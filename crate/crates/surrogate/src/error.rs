use mcds_core::TaskRef;
use mcds_tensor::checkpoint::CheckpointError;
use mcds_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Core(#[from] mcds_core::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("empty training batch")]
    EmptyBatch,
    #[error("target {0} outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("state does not match the model: {0}")]
    StateShape(String),
    #[error("no host can hold {0}")]
    NoFeasibleHost(TaskRef),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
