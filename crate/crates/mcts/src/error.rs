use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] mcds_core::Error),
    #[error(transparent)]
    Surrogate(#[from] mcds_surrogate::Error),
    #[error("no candidate action to expand")]
    NoFeasibleAction,
    #[error("root has no children to choose from")]
    RootNotExpanded,
    #[error("invalid search configuration: {0}")]
    ConfigInvalid(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<Error> for mcds_core::Error {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(c) => c,
            other => mcds_core::Error::Scheduler(other.to_string()),
        }
    }
}
