//! Domain model and interval co-simulator for DAG workflows on edge-cloud
//! hosts.

pub mod calibrate;
pub mod decision;
mod error;
pub mod host;
pub mod metrics;
pub mod sched;
pub mod sim;
pub mod state;
pub mod workflow;
pub mod workload;

pub use decision::{SchedulingDecision, TaskRef};
pub use error::{Error, Result};
pub use host::{HostSpec, Tier};
pub use metrics::IntervalMetrics;
pub use sched::{GreedyScheduler, RandomScheduler, Scheduler};
pub use sim::{SimConfig, Simulator, StepOutcome};
pub use state::SystemState;
pub use workflow::{TaskSpec, TaskState, TaskStatus, Workflow};
