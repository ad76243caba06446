//! Synthetic workflow arrivals built from three DAG shapes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workflow::{TaskSpec, Workflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// `0 → 1 → … → n−1`.
    Chain,
    /// One source fanning out to `n−2` parallel tasks that join in a sink.
    ForkJoin,
    /// Random layers of width 1–3, each node fed by one or two nodes of the
    /// previous layer.
    Layered,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::Chain, Template::ForkJoin, Template::Layered];

    pub fn label(self) -> &'static str {
        match self {
            Template::Chain => "chain",
            Template::ForkJoin => "fork_join",
            Template::Layered => "layered",
        }
    }

    pub fn edges(self, n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
        match self {
            Template::Chain => (1..n).map(|i| (i - 1, i)).collect(),
            Template::ForkJoin if n < 3 => Template::Chain.edges(n, rng),
            Template::ForkJoin => (1..n - 1).flat_map(|i| [(0, i), (i, n - 1)]).collect(),
            Template::Layered => {
                let mut layers: Vec<Vec<usize>> = vec![vec![0]];
                let mut next = 1;
                while next < n {
                    let width = rng.gen_range(1..=3).min(n - next);
                    layers.push((next..next + width).collect());
                    next += width;
                }
                let mut edges = Vec::new();
                for pair in layers.windows(2) {
                    for &child in &pair[1] {
                        let k = rng.gen_range(1..=2).min(pair[0].len());
                        let mut parents: Vec<usize> =
                            pair[0].choose_multiple(rng, k).copied().collect();
                        parents.sort_unstable();
                        edges.extend(parents.into_iter().map(|p| (p, child)));
                    }
                }
                edges
            }
        }
    }
}

/// Ranges (inclusive-exclusive, uniform) task demands are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub demand_ips: (f64, f64),
    /// Task length in units of `demand_ips × interval_seconds`, i.e. the
    /// number of intervals the task needs when it runs at full demand.
    pub length_intervals: (f64, f64),
    pub demand_ram: (f64, f64),
    pub demand_bw: (f64, f64),
}

impl Default for TaskDistribution {
    fn default() -> Self {
        Self {
            demand_ips: (1500.0, 6000.0),
            length_intervals: (0.5, 1.5),
            demand_ram: (256.0, 1536.0),
            demand_bw: (5.0, 20.0),
        }
    }
}

impl TaskDistribution {
    pub fn sample(&self, interval_seconds: f64, rng: &mut impl Rng) -> TaskSpec {
        let draw = |(lo, hi): (f64, f64), rng: &mut dyn rand::RngCore| {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        };
        let demand_ips = draw(self.demand_ips, rng);
        TaskSpec {
            length: demand_ips * interval_seconds * draw(self.length_intervals, rng),
            demand_ips,
            demand_ram: draw(self.demand_ram, rng),
            demand_bw: draw(self.demand_bw, rng),
        }
    }
}

/// Everything [`generate_workflows`] needs besides the RNG.
#[derive(Clone)]
pub struct WorkloadParams<'a> {
    pub lambda: f64,
    pub templates: &'a [Template],
    pub task_count_range: (usize, usize),
    pub tasks: &'a TaskDistribution,
    pub interval_seconds: f64,
    pub deadline_for: &'a dyn Fn(&str) -> f64,
}

/// Poisson(λ) workflows arriving at `interval`, with ids from `next_id` on.
pub fn generate_workflows(
    rng: &mut impl Rng,
    params: &WorkloadParams<'_>,
    interval: usize,
    next_id: &mut usize,
) -> Result<Vec<Workflow>> {
    if params.templates.is_empty() {
        return Err(Error::EmptyTemplateSet);
    }
    let count = if params.lambda > 0.0 {
        let poisson = Poisson::new(params.lambda)
            .map_err(|e| Error::ConfigInvalid(format!("lambda {}: {e}", params.lambda)))?;
        poisson.sample(rng) as usize
    } else {
        0
    };
    let (lo, hi) = params.task_count_range;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let template = *params.templates.choose(rng).expect("non-empty");
        let n = rng.gen_range(lo..=hi);
        let specs: Vec<TaskSpec> = (0..n)
            .map(|_| params.tasks.sample(params.interval_seconds, rng))
            .collect();
        let edges = template.edges(n, rng);
        let label = template.label();
        out.push(Workflow::new(
            *next_id,
            label,
            interval,
            (params.deadline_for)(label),
            &specs,
            edges,
        ));
        *next_id += 1;
    }
    Ok(out)
}
