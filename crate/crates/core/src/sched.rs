//! The scheduler interface and the two reference policies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::SchedulingDecision;
use crate::error::{Error, Result};
use crate::metrics::IntervalMetrics;
use crate::sim::Simulator;

pub trait Scheduler {
    fn name(&self) -> &str;

    /// The decision for the interval `sim` is about to execute.
    fn decide(&mut self, sim: &Simulator) -> Result<SchedulingDecision>;

    /// Called with the real outcome of the decision last returned.
    fn observe(&mut self, _metrics: &IntervalMetrics) {}
}

/// Each feasible task goes to a uniformly chosen host with enough free RAM;
/// active tasks stay put.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomScheduler {
    rng: ChaCha8Rng,
}

impl RandomScheduler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

impl Scheduler for RandomScheduler {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, sim: &Simulator) -> Result<SchedulingDecision> {
        let hosts = sim.hosts();
        let mut ram = sim.ram_used();
        let mut d = SchedulingDecision::new();
        for r in sim.feasible_tasks() {
            let demand = sim.task(&r).expect("feasible task exists").demand_ram;
            let fits: Vec<usize> = (0..hosts.len())
                .filter(|&h| ram[h] + demand <= hosts[h].ram)
                .collect();
            if let Some(&h) = fits.choose(&mut self.rng) {
                ram[h] += demand;
                d.assign(r, h);
            }
        }
        Ok(d)
    }
}

/// Each feasible task goes to the host with the least CPU load (Σ demand /
/// MIPS, counting earlier placements) that has enough free RAM; ties go to
/// the lowest index. Active tasks stay put.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GreedyScheduler;

impl Scheduler for GreedyScheduler {
    fn name(&self) -> &str {
        "greedy"
    }

    fn decide(&mut self, sim: &Simulator) -> Result<SchedulingDecision> {
        let hosts = sim.hosts();
        let mut ram = sim.ram_used();
        let mut load = sim.cpu_load();
        let mut d = SchedulingDecision::new();
        for r in sim.feasible_tasks() {
            let task = sim.task(&r).expect("feasible task exists");
            let best = (0..hosts.len())
                .filter(|&h| ram[h] + task.demand_ram <= hosts[h].ram)
                .fold(None, |best: Option<usize>, h| match best {
                    Some(b) if load[b] <= load[h] => Some(b),
                    _ => Some(h),
                });
            if let Some(h) = best {
                ram[h] += task.demand_ram;
                load[h] += task.demand_ips / hosts[h].mips;
                d.assign(r, h);
            }
        }
        Ok(d)
    }
}

/// Mean objective of `horizon` intervals stepped on a clone of `sim` under
/// `policy`.
pub fn rollout(sim: &Simulator, policy: &mut dyn Scheduler, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::ConfigInvalid(
            "rollout horizon must be at least 1".into(),
        ));
    }
    let mut sim = sim.clone();
    let mut total = 0.0;
    for _ in 0..horizon {
        let d = policy.decide(&sim)?;
        total += sim.step(&d)?.metrics.objective;
    }
    Ok(total / horizon as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimConfig;

    #[test]
    fn horizon_one_is_a_single_step() {
        let sim = Simulator::new(SimConfig {
            lambda: 2.0,
            ..SimConfig::default()
        })
        .unwrap();
        let v = rollout(&sim, &mut GreedyScheduler, 1).unwrap();
        let mut copy = sim.clone();
        let d = GreedyScheduler.decide(&copy).unwrap();
        assert_eq!(v, copy.step(&d).unwrap().metrics.objective);
    }

    #[test]
    fn idle_rollout_is_the_idle_objective() {
        let cfg = SimConfig {
            lambda: 0.0,
            ..SimConfig::default()
        };
        let idle: f64 = cfg.hosts.iter().map(|h| h.power_idle).sum();
        let peak: f64 = cfg.hosts.iter().map(|h| h.power_peak).sum();
        let sim = Simulator::new(cfg).unwrap();
        let v = rollout(&sim, &mut RandomScheduler::new(0), 10).unwrap();
        assert!((v - (1.0 - 0.5 * idle / peak)).abs() < 1e-12);
    }

    #[test]
    fn rollouts_repeat_and_leave_the_source_alone() {
        let sim = Simulator::new(SimConfig {
            lambda: 1.0,
            seed: 5,
            ..SimConfig::default()
        })
        .unwrap();
        let before = serde_json::to_string(&sim).unwrap();
        let a = rollout(&sim, &mut RandomScheduler::new(1), 10).unwrap();
        let b = rollout(&sim, &mut RandomScheduler::new(1), 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&sim).unwrap(), before);
    }

    #[test]
    fn greedy_spreads_by_load() {
        let sim = Simulator::new(SimConfig {
            lambda: 4.0,
            seed: 2,
            ..SimConfig::default()
        })
        .unwrap();
        let d = GreedyScheduler.decide(&sim).unwrap();
        // the first placement lands on host 0: all loads are zero
        let first = sim.feasible_tasks()[0];
        assert_eq!(d.get(&first), Some(0));
    }
}
