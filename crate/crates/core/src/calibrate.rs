//! Per-application SLA deadlines from a reference run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::nearest_rank_percentile;
use crate::sched::Scheduler;
use crate::sim::{SimConfig, Simulator};

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub deadlines: BTreeMap<String, f64>,
    /// Every response time observed, per application.
    pub responses: BTreeMap<String, Vec<f64>>,
}

impl Calibration {
    /// Share of the recorded responses that exceed their deadline.
    pub fn violation_rate(&self) -> f64 {
        let (mut late, mut total) = (0usize, 0usize);
        for (app, rs) in &self.responses {
            let d = self.deadlines[app];
            late += rs.iter().filter(|&&r| r > d).count();
            total += rs.len();
        }
        late as f64 / total.max(1) as f64
    }
}

/// Runs `scheduler` for `n_intervals` and takes the configured nearest-rank
/// percentile of each application's response times.
pub fn calibrate_deadlines(
    scheduler: &mut dyn Scheduler,
    config: &SimConfig,
    n_intervals: usize,
) -> Result<Calibration> {
    let mut sim = Simulator::new(config.clone())?;
    let mut responses: BTreeMap<String, Vec<f64>> = config
        .app_labels()
        .into_iter()
        .map(|a| (a.to_string(), Vec::new()))
        .collect();
    for _ in 0..n_intervals {
        let d = scheduler.decide(&sim)?;
        let out = sim.step(&d)?;
        scheduler.observe(&out.metrics);
        for f in out.metrics.finished {
            responses
                .entry(f.app_label)
                .or_default()
                .push(f.response_time);
        }
    }
    deadlines_from(responses, config.deadline_percentile)
}

pub fn deadlines_from(
    responses: BTreeMap<String, Vec<f64>>,
    percentile: f64,
) -> Result<Calibration> {
    let mut deadlines = BTreeMap::new();
    for (app, rs) in &responses {
        if rs.len() < MIN_SAMPLES {
            return Err(Error::InsufficientSamples {
                app: app.clone(),
                found: rs.len(),
                needed: MIN_SAMPLES,
            });
        }
        deadlines.insert(
            app.clone(),
            nearest_rank_percentile(rs, percentile).expect("non-empty"),
        );
    }
    Ok(Calibration {
        deadlines,
        responses,
    })
}
