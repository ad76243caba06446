use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::host::HostSpec;
use crate::workflow::Workflow;

/// Linear power model between idle and peak draw, in watts.
pub fn host_power(spec: &HostSpec, cpu_fraction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&cpu_fraction) {
        return Err(Error::FractionOutOfRange(cpu_fraction));
    }
    Ok(spec.power_idle + cpu_fraction * (spec.power_peak - spec.power_idle))
}

/// Jain's index `(Σx)² / (n·Σx²)`; 1 when every entry is zero.
pub fn jain_fairness(allotments: &[f64]) -> Result<f64> {
    if allotments.is_empty() {
        return Err(Error::EmptyList);
    }
    let sum: f64 = allotments.iter().sum();
    let sq: f64 = allotments.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return Ok(1.0);
    }
    Ok((sum * sum / (allotments.len() as f64 * sq)).min(1.0))
}

/// Interval energy as a fraction of what every host would draw at peak.
pub fn normalized_energy(energy_joules: f64, hosts: &[HostSpec], interval_seconds: f64) -> f64 {
    let peak: f64 = hosts.iter().map(|h| h.power_peak).sum();
    energy_joules / (peak * interval_seconds)
}

/// Mean clipped response time over `r_max`; 0 when nothing finished.
pub fn normalized_response(responses: &[f64], r_max: f64) -> f64 {
    if responses.is_empty() {
        return 0.0;
    }
    let mean = responses.iter().map(|r| r.min(r_max)).sum::<f64>() / responses.len() as f64;
    mean / r_max
}

/// `1 − α·AEC − (1 − α)·ART`.
pub fn compute_objective(alpha: f64, aec: f64, art: f64) -> f64 {
    1.0 - alpha * aec - (1.0 - alpha) * art
}

/// True iff the response time exceeds the deadline.
pub fn sla_violated(workflow: &Workflow) -> Result<bool> {
    let response = workflow
        .response_time
        .ok_or(Error::WorkflowNotFinished(workflow.id))?;
    Ok(response > workflow.deadline)
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// A workflow that completed during an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinishedWorkflow {
    pub id: usize,
    pub app_label: String,
    pub response_time: f64,
    pub deadline: f64,
    pub violated: bool,
    pub total_length: f64,
    pub executed_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub interval: usize,
    pub energy_kwh_per_host: Vec<f64>,
    pub energy_kwh: f64,
    pub aec: f64,
    pub art: f64,
    pub objective: f64,
    pub finished: Vec<FinishedWorkflow>,
    pub sla_violations: usize,
    pub migrations: usize,
    pub migration_time_s: f64,
    /// Intervals between arrival and first placement, per workflow admitted
    /// this interval.
    pub wait_times: Vec<f64>,
    /// Accumulated since the start of the run.
    pub cost_usd: f64,
    pub fairness: f64,
    /// Instructions per second granted to each executing task.
    pub allotments: Vec<f64>,
    pub cpu_fraction: Vec<f64>,
}

impl IntervalMetrics {
    pub fn completed_workflows(&self) -> usize {
        self.finished.len()
    }

    pub fn wait_mean(&self) -> f64 {
        mean(&self.wait_times)
    }

    /// Mean response of workflows of `app` finishing this interval.
    pub fn app_response_mean(&self, app: &str) -> f64 {
        let r: Vec<f64> = self
            .finished
            .iter()
            .filter(|f| f.app_label == app)
            .map(|f| f.response_time)
            .collect();
        mean(&r)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::desk_hosts;
    use crate::workflow::TaskSpec;
    use proptest::prelude::*;

    #[test]
    fn power_examples() {
        let mut h = desk_hosts().remove(0);
        assert_eq!(host_power(&h, 0.0).unwrap(), h.power_idle);
        assert_eq!(host_power(&h, 1.0).unwrap(), h.power_peak);
        h.power_idle = 100.0;
        h.power_peak = 300.0;
        assert_eq!(host_power(&h, 0.5).unwrap(), 200.0);
        assert!(matches!(
            host_power(&h, 1.5),
            Err(Error::FractionOutOfRange(_))
        ));
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(jain_fairness(&[5.0; 4]).unwrap(), 1.0);
        assert_eq!(jain_fairness(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.25);
        let expect = 36.0 / (3.0 * 14.0);
        assert!((jain_fairness(&[1.0, 2.0, 3.0]).unwrap() - expect).abs() < 1e-15);
        assert_eq!(jain_fairness(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(jain_fairness(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn objective_examples() {
        assert_eq!(compute_objective(0.5, 0.0, 0.0), 1.0);
        assert!((compute_objective(0.5, 0.4, 0.2) - 0.7).abs() < 1e-15);
        for alpha in [0.0, 0.3, 1.0] {
            assert_eq!(compute_objective(alpha, 1.0, 1.0), 0.0);
        }
    }

    #[test]
    fn sla_boundary_is_not_a_violation() {
        let spec = TaskSpec {
            length: 1.0,
            demand_ips: 1.0,
            demand_ram: 1.0,
            demand_bw: 1.0,
        };
        let mut w = Workflow::new(0, "a", 0, 10.0, &[spec], vec![]);
        assert!(matches!(
            sla_violated(&w),
            Err(Error::WorkflowNotFinished(0))
        ));
        w.response_time = Some(10.0);
        assert!(!sla_violated(&w).unwrap());
        w.response_time = Some(11.0);
        assert!(sla_violated(&w).unwrap());
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank_percentile(&v, 98.0), Some(98.0));
        assert_eq!(nearest_rank_percentile(&[4.5; 60], 98.0), Some(4.5));
        assert_eq!(nearest_rank_percentile(&[], 98.0), None);
    }

    proptest! {
        #[test]
        fn fairness_is_bounded(x in prop::collection::vec(0.0f64..1e4, 1..20)) {
            let j = jain_fairness(&x).unwrap();
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert!(j >= 1.0 / x.len() as f64 - 1e-12);
        }

        #[test]
        fn objective_is_bounded(alpha in 0.0f64..=1.0, aec in 0.0f64..=1.0, art in 0.0f64..=1.0) {
            let o = compute_objective(alpha, aec, art);
            prop_assert!((0.0..=1.0).contains(&o));
        }
    }
}
