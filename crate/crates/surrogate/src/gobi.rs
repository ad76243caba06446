//! Gradient ascent on a softmax relaxation of the decision matrix, followed
//! by row-wise projection back to one host per task and RAM repair.

use mcds_core::{SchedulingDecision, SystemState};
use mcds_tensor::{grad_wrt_input, Tensor, TensorError};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Context, Surrogate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GobiConfig {
    /// Ascent step on the logits.
    pub step_size: f64,
    /// Stop once every logit gradient is at most this in magnitude.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for GobiConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            tolerance: 1e-3,
            max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GobiResult {
    pub decision: SchedulingDecision,
    /// Objective of the relaxed decision at each evaluated iterate.
    pub trajectory: Vec<f64>,
    /// Ascent steps taken.
    pub iterations: usize,
    pub converged: bool,
}

/// Something to maximise over relaxed decision matrices
/// (`slots × n_hosts`, row-major).
pub trait DecisionObjective {
    fn value_and_grad(&self, relaxed: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// The surrogate's prediction for one state, with `(G, W)` fixed.
pub struct SurrogateObjective<'a> {
    model: &'a Surrogate,
    context: Context,
    shape: [usize; 2],
}

impl<'a> SurrogateObjective<'a> {
    pub fn new(model: &'a Surrogate, state: &SystemState) -> Result<Self> {
        Ok(Self {
            model,
            context: model.context(&[state])?,
            shape: [state.n_slots(), state.n_hosts],
        })
    }
}

impl DecisionObjective for SurrogateObjective<'_> {
    fn value_and_grad(&self, relaxed: &[f64]) -> Result<(f64, Vec<f64>)> {
        let input = Tensor::new(relaxed.to_vec(), &self.shape)?;
        let mut value = 0.0;
        let grad = grad_wrt_input(&input, |x| {
            let out = self.model.score(&self.context, x).map_err(|e| match e {
                Error::Tensor(t) => t,
                other => TensorError::InvalidArgument {
                    op: "surrogate",
                    detail: other.to_string(),
                },
            })?;
            value = out.item();
            out.sum()
        });
        match grad {
            Ok(g) => Ok((value, g.to_vec())),
            // the decision head may not reach the output at all (dead ReLUs)
            Err(TensorError::InputNotInGraph) => Ok((value, vec![0.0; relaxed.len()])),
            Err(e) => Err(e.into()),
        }
    }
}

/// GOBI over the surrogate for `state`, starting from `initial`.
pub fn gobi_graph(
    model: &Surrogate,
    state: &SystemState,
    initial: &SchedulingDecision,
    config: &GobiConfig,
) -> Result<GobiResult> {
    gobi(
        &SurrogateObjective::new(model, state)?,
        state,
        initial,
        config,
    )
}

/// Maximises `objective` over the relaxation, starting from logits equal to
/// `M^{initial}`. Only schedulable slots (active or feasible) are free; the
/// rest stay unassigned.
pub fn gobi(
    objective: &dyn DecisionObjective,
    state: &SystemState,
    initial: &SchedulingDecision,
    config: &GobiConfig,
) -> Result<GobiResult> {
    let n_hosts = state.n_hosts;
    let free: Vec<usize> = state.schedulable().collect();
    let mut logits = state.matrix_for(initial)?;
    // active tasks the initial decision leaves out start where they are
    for i in (0..state.n_slots()).filter(|&i| state.active[i]) {
        let row = &mut logits[i * n_hosts..(i + 1) * n_hosts];
        if let (true, Some(h)) = (row.iter().all(|&l| l == 0.0), state.current_host[i]) {
            row[h] = 1.0;
        }
    }
    let mut trajectory = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        let relaxed = relax(&logits, &free, n_hosts);
        let (value, grad) = objective.value_and_grad(&relaxed)?;
        trajectory.push(value);
        let step = softmax_backward(&relaxed, &grad, &free, n_hosts);
        if step.iter().all(|g| g.abs() <= config.tolerance) {
            converged = true;
            break;
        }
        logits
            .iter_mut()
            .zip(&step)
            .for_each(|(l, g)| *l += config.step_size * g);
        iterations += 1;
    }
    Ok(GobiResult {
        decision: project(state, &logits)?,
        trajectory,
        iterations,
        converged,
    })
}

/// Row softmax on free slots, zero rows elsewhere.
fn relax(logits: &[f64], free: &[usize], n_hosts: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for &i in free {
        let row = &logits[i * n_hosts..(i + 1) * n_hosts];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        for (o, e) in out[i * n_hosts..(i + 1) * n_hosts].iter_mut().zip(exp) {
            *o = e / sum;
        }
    }
    out
}

/// Chain rule through the row softmax: `p_j (g_j − Σ_k p_k g_k)`.
fn softmax_backward(p: &[f64], g: &[f64], free: &[usize], n_hosts: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for &i in free {
        let r = i * n_hosts..(i + 1) * n_hosts;
        let dot: f64 = p[r.clone()]
            .iter()
            .zip(&g[r.clone()])
            .map(|(a, b)| a * b)
            .sum();
        for j in r {
            out[j] = p[j] * (g[j] - dot);
        }
    }
    out
}

/// Hosts for one row, best logit first (ties to the lower index).
fn ranked(row: &[f64]) -> Vec<usize> {
    let mut hosts: Vec<usize> = (0..row.len()).collect();
    hosts.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    hosts
}

/// Row argmax with RAM repair. Active slots are placed first, in task
/// order, then feasible ones; a task whose preferred host is full takes the
/// best-ranked host with room. An active task with nowhere to go, not even
/// its current host, is an error; a feasible one is left for a later
/// interval.
fn project(state: &SystemState, logits: &[f64]) -> Result<SchedulingDecision> {
    let n_hosts = state.n_hosts;
    let mut decision = SchedulingDecision::new();
    // migrations are applied one at a time in task order, each needing room
    // while every later task still sits on its source host
    let mut used = state.ram_outside_slots.clone();
    let mut active: Vec<usize> = (0..state.n_slots()).filter(|&i| state.active[i]).collect();
    active.sort_by_key(|&i| state.slots[i]);
    for &i in &active {
        if let Some(h) = state.current_host[i] {
            used[h] += state.demand_ram[i];
        }
    }
    for &i in &active {
        let demand = state.demand_ram[i];
        let from = state.current_host[i];
        let choice = ranked(&logits[i * n_hosts..(i + 1) * n_hosts])
            .into_iter()
            .find(|&h| {
                if Some(h) == from {
                    used[h] <= state.host_ram[h]
                } else {
                    used[h] + demand <= state.host_ram[h]
                }
            });
        let Some(h) = choice else {
            return Err(Error::NoFeasibleHost(state.slots[i]));
        };
        if Some(h) != from {
            if let Some(f) = from {
                used[f] -= demand;
            }
            used[h] += demand;
        }
        decision.assign(state.slots[i], h);
    }
    for i in (0..state.n_slots()).filter(|&i| !state.active[i] && state.feasible[i]) {
        let demand = state.demand_ram[i];
        let choice = ranked(&logits[i * n_hosts..(i + 1) * n_hosts])
            .into_iter()
            .find(|&h| used[h] + demand <= state.host_ram[h]);
        if let Some(h) = choice {
            used[h] += demand;
            decision.assign(state.slots[i], h);
        }
    }
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.5];
        let w = [0.7, -0.2, 0.4, 1.1, -0.9, 0.3];
        let f = |l: &[f64]| {
            relax(l, &[0, 1], 3)
                .iter()
                .zip(&w)
                .map(|(p, w)| p * w)
                .sum::<f64>()
        };
        let analytic = softmax_backward(&relax(&logits, &[0, 1], 3), &w, &[0, 1], 3);
        for j in 0..6 {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[j] += 1e-6;
            down[j] -= 1e-6;
            let fd = (f(&up) - f(&down)) / 2e-6;
            assert!(
                (fd - analytic[j]).abs() < 1e-8,
                "{j}: {fd} vs {}",
                analytic[j]
            );
        }
    }

    #[test]
    fn ties_rank_lower_hosts_first() {
        assert_eq!(ranked(&[1.0, 2.0, 2.0, 0.0]), vec![1, 2, 0, 3]);
    }
}
