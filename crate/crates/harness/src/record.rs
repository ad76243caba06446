//! Per-interval CSV rows and per-run summaries.

use std::fs::File;
use std::path::Path;

use mcds_core::IntervalMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{unwritable, Result};
use crate::stats::{mean, t_interval, Interval, CONFIDENCE};

/// Fixed leading columns of the per-interval CSV; one `response_<app>`
/// column per application follows.
pub const INTERVAL_COLUMNS: [&str; 12] = [
    "interval",
    "energy_kwh",
    "art",
    "aec",
    "objective",
    "sla_violations",
    "migrations",
    "migration_time_s",
    "cost_usd",
    "fairness",
    "wait_mean",
    "completed_workflows",
];

/// Summary metrics, in report order.
pub const METRICS: [&str; 10] = [
    "energy_kwh",
    "response_time",
    "sla_rate",
    "wait_time",
    "scheduling_time_s",
    "migrations",
    "migration_time_s",
    "cost_per_workflow",
    "fairness",
    "objective",
];

/// Metrics that depend on wall-clock time and so differ between repeats.
pub const TIMING_METRICS: [&str; 1] = ["scheduling_time_s"];

pub(crate) fn create_csv(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(
        File::create(path).map_err(unwritable(path))?,
    ))
}

/// Writes one row per interval.
pub fn write_interval_csv(path: &Path, apps: &[&str], metrics: &[IntervalMetrics]) -> Result<()> {
    let mut w = create_csv(path)?;
    let mut header: Vec<String> = INTERVAL_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend(apps.iter().map(|a| format!("response_{a}")));
    w.write_record(&header)?;
    for m in metrics {
        let mut row = vec![
            m.interval.to_string(),
            m.energy_kwh.to_string(),
            m.art.to_string(),
            m.aec.to_string(),
            m.objective.to_string(),
            m.sla_violations.to_string(),
            m.migrations.to_string(),
            m.migration_time_s.to_string(),
            m.cost_usd.to_string(),
            m.fairness.to_string(),
            m.wait_mean().to_string(),
            m.completed_workflows().to_string(),
        ];
        row.extend(apps.iter().map(|a| m.app_response_mean(a).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(unwritable(path))?;
    Ok(())
}

/// Writes the wall-clock scheduling time of each interval.
pub fn write_timing_csv(path: &Path, first_interval: usize, seconds: &[f64]) -> Result<()> {
    let mut w = create_csv(path)?;
    w.write_record(["interval", "scheduling_time_s"])?;
    for (i, s) in seconds.iter().enumerate() {
        w.write_record([(first_interval + i).to_string(), s.to_string()])?;
    }
    w.flush().map_err(unwritable(path))?;
    Ok(())
}

/// Summary metric values of one seed's run, in [`METRICS`] order.
pub fn seed_metrics(metrics: &[IntervalMetrics], scheduling_times: &[f64]) -> Vec<f64> {
    let responses: Vec<f64> = metrics
        .iter()
        .flat_map(|m| m.finished.iter().map(|f| f.response_time))
        .collect();
    let waits: Vec<f64> = metrics
        .iter()
        .flat_map(|m| m.wait_times.iter().copied())
        .collect();
    let completed: usize = metrics.iter().map(|m| m.completed_workflows()).sum();
    let violations: usize = metrics.iter().map(|m| m.sla_violations).sum();
    let cost = metrics.last().map_or(0.0, |m| m.cost_usd);
    vec![
        metrics.iter().map(|m| m.energy_kwh).sum(),
        mean(&responses),
        if completed == 0 {
            0.0
        } else {
            violations as f64 / completed as f64
        },
        mean(&waits),
        mean(scheduling_times),
        metrics.iter().map(|m| m.migrations).sum::<usize>() as f64,
        metrics.iter().map(|m| m.migration_time_s).sum(),
        cost / completed.max(1) as f64,
        mean(&metrics.iter().map(|m| m.fairness).collect::<Vec<_>>()),
        mean(&metrics.iter().map(|m| m.objective).collect::<Vec<_>>()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// 90% t-interval over seeds; absent with a single seed.
    pub ci: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub scheduler: String,
    pub ablations: String,
    pub psi: usize,
    pub seeds: Vec<u64>,
    pub metrics: Vec<MetricSummary>,
}

impl RunSummary {
    /// Pools per-seed rows given in [`METRICS`] order.
    pub fn from_seeds(
        label: String,
        scheduler: String,
        ablations: String,
        psi: usize,
        seeds: Vec<u64>,
        rows: &[Vec<f64>],
    ) -> Self {
        let metrics = METRICS
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let per_seed: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                MetricSummary {
                    name: name.to_string(),
                    mean: mean(&per_seed),
                    ci: t_interval(&per_seed, CONFIDENCE),
                    per_seed,
                }
            })
            .collect();
        Self {
            label,
            scheduler,
            ablations,
            psi,
            seeds,
            metrics,
        }
    }

    pub fn metric(&self, name: &str) -> &MetricSummary {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .unwrap_or_else(|| panic!("no metric {name}"))
    }

    pub fn mean(&self, name: &str) -> f64 {
        self.metric(name).mean
    }

    /// Summary with the wall-clock metrics blanked, for comparing repeats.
    pub fn without_timing(&self) -> Self {
        let mut s = self.clone();
        for m in &mut s.metrics {
            if TIMING_METRICS.contains(&m.name.as_str()) {
                m.per_seed.iter_mut().for_each(|v| *v = 0.0);
                m.mean = 0.0;
                m.ci = None;
            }
        }
        s
    }
}
