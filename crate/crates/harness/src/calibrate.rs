//! Deadline calibration against the greedy reference scheduler.

use mcds_core::calibrate::{calibrate_deadlines, Calibration};
use mcds_core::GreedyScheduler;

use crate::config::ExperimentConfig;
use crate::error::Result;

/// Runs greedy on the calibration workload and takes each application's
/// configured percentile response time as its deadline.
pub fn calibrate(config: &ExperimentConfig) -> Result<Calibration> {
    let sim = config.sim_for_seed(config.calibration.seed);
    Ok(calibrate_deadlines(
        &mut GreedyScheduler,
        &sim,
        config.calibration.n_intervals,
    )?)
}

/// `config` with the calibrated deadlines installed.
pub fn with_deadlines(config: &ExperimentConfig, calibration: &Calibration) -> ExperimentConfig {
    let mut c = config.clone();
    c.sim.deadlines = calibration.deadlines.clone();
    c
}
