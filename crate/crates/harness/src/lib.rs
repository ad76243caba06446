//! Experiment runner: training campaigns, evaluation over seeds,
//! calibration, ψ sweeps and reporting.

pub mod calibrate;
pub mod config;
mod error;
pub mod eval;
pub mod record;
pub mod report;
pub mod sensitivity;
pub mod stats;
pub mod training;

pub use config::{ExperimentConfig, SchedulerKind};
pub use error::{Error, Result};
pub use eval::{evaluate, run_eval, Evaluation, SeedRun};
pub use record::{MetricSummary, RunSummary};
pub use report::emit_report;
pub use sensitivity::{run_sensitivity, SensitivityRow};
pub use training::{run_training, TrainingRun};
