//! Sweeps over the number of search iterations per interval.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{unwritable, Error, Result};
use crate::eval::run_eval;
use crate::record::{create_csv, RunSummary};
use crate::report::line_chart;

/// Columns of the sensitivity table.
pub const SENSITIVITY_METRICS: [&str; 5] = [
    "objective",
    "energy_kwh",
    "response_time",
    "sla_rate",
    "scheduling_time_s",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub psi: usize,
    pub summary: RunSummary,
}

/// One evaluation per ψ, each written under `output_dir/psi-<ψ>/`, and the
/// table in `output_dir/sensitivity.csv`.
pub fn run_sensitivity(
    config: &ExperimentConfig,
    psi_values: &[usize],
) -> Result<Vec<SensitivityRow>> {
    if psi_values.is_empty() {
        return Err(Error::ConfigInvalid("no ψ values to sweep".into()));
    }
    let mut rows = Vec::with_capacity(psi_values.len());
    for &psi in psi_values {
        let mut c = config.clone();
        c.search.psi = psi;
        c.output_dir = config.output_dir.join(format!("psi-{psi}"));
        rows.push(SensitivityRow {
            psi,
            summary: run_eval(&c)?.summary,
        });
    }
    std::fs::create_dir_all(&config.output_dir).map_err(unwritable(&config.output_dir))?;
    write_table(&config.output_dir.join("sensitivity.csv"), &rows)?;
    let xs: Vec<String> = rows.iter().map(|r| format!("ψ={}", r.psi)).collect();
    for m in SENSITIVITY_METRICS {
        let series = vec![(
            config.scheduler.name().to_string(),
            rows.iter().map(|r| r.summary.mean(m)).collect(),
        )];
        let path = config.output_dir.join(format!("sensitivity-{m}.svg"));
        std::fs::write(&path, line_chart(m, &xs, &series)).map_err(unwritable(&path))?;
    }
    Ok(rows)
}

pub fn write_table(path: &Path, rows: &[SensitivityRow]) -> Result<()> {
    let mut w = create_csv(path)?;
    let mut header = vec!["psi".to_string()];
    for m in SENSITIVITY_METRICS {
        header.extend([
            format!("{m}_mean"),
            format!("{m}_ci_low"),
            format!("{m}_ci_high"),
        ]);
    }
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.psi.to_string()];
        for m in SENSITIVITY_METRICS {
            let s = row.summary.metric(m);
            let (lo, hi) = s.ci.map_or((s.mean, s.mean), |ci| (ci.low, ci.high));
            record.extend([s.mean.to_string(), lo.to_string(), hi.to_string()]);
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(unwritable(path))?;
    Ok(())
}
