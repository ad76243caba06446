use thiserror::Error;

use crate::decision::TaskRef;

#[derive(Debug, Error)]
pub enum Error {
    #[error("workflow has a dependency cycle through tasks {0:?}")]
    CyclicDependency(Vec<usize>),
    #[error("edge references task {task} but the workflow has {n_tasks} tasks")]
    DanglingTaskIndex { task: usize, n_tasks: usize },
    #[error("host index {host} out of range for {n_hosts} hosts")]
    HostIndexOutOfRange { host: usize, n_hosts: usize },
    #[error("template set is empty")]
    EmptyTemplateSet,
    #[error("cpu fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("fairness of an empty allotment list")]
    EmptyList,
    #[error("workflow {0} has not finished")]
    WorkflowNotFinished(usize),
    #[error("application {app} has {found} completions, need at least {needed}")]
    InsufficientSamples {
        app: String,
        found: usize,
        needed: usize,
    },
    #[error("no capacity-feasible host for task {0}")]
    NoFeasibleHost(TaskRef),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    /// A scheduler built outside this crate failed.
    #[error("scheduler: {0}")]
    Scheduler(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
