//! The `(G, W, S)` triple the surrogate model reads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decision::{decision_matrix, SchedulingDecision, TaskRef};
use crate::error::Result;
use crate::sim::{Simulator, HOST_FEATURES};

/// Per-task embedding width: remaining deadline fraction, then CPU, RAM and
/// bandwidth demand as fractions of the task's host.
pub const EMBED_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub n_hosts: usize,
    pub window_rows: usize,
    /// Task occupying each graph slot: unfinished tasks of the workflows in
    /// the system, by workflow then task index, capped at the slot budget.
    pub slots: Vec<TaskRef>,
    pub active: Vec<bool>,
    pub feasible: Vec<bool>,
    /// Host each active slot currently sits on.
    pub current_host: Vec<Option<usize>>,
    /// RAM demand per slot, for capacity repair.
    pub demand_ram: Vec<f64>,
    pub host_ram: Vec<f64>,
    /// RAM held on each host by active tasks that did not get a slot.
    pub ram_outside_slots: Vec<f64>,
    /// `slots × EMBED_DIM`; zero rows for inactive tasks.
    pub embeddings: Vec<f64>,
    /// Undirected adjacency as `(dst, src)` slot pairs, both directions.
    pub edges: Vec<(usize, usize)>,
    /// `window_rows × (n_hosts × HOST_FEATURES)`, entries in `[0, 1]`.
    pub window: Vec<f64>,
    /// `slots × n_hosts` one-hot rows (zero for unassigned slots).
    pub decision: Vec<f64>,
}

impl SystemState {
    /// Encodes the simulator with its last applied decision.
    pub fn capture(sim: &Simulator, max_slots: usize) -> Self {
        let n_hosts = sim.n_hosts();
        let now = sim.interval();
        let mut slots = Vec::new();
        let mut active = Vec::new();
        let mut feasible = Vec::new();
        let mut current_host = Vec::new();
        let mut demand_ram = Vec::new();
        let mut embeddings = Vec::new();
        let mut index = BTreeMap::new();
        'outer: for w in sim.workflows() {
            for (i, t) in w.tasks.iter().enumerate() {
                if t.status == crate::workflow::TaskStatus::Done {
                    continue;
                }
                if slots.len() == max_slots {
                    break 'outer;
                }
                let r = TaskRef::new(w.id, i);
                index.insert(r, slots.len());
                slots.push(r);
                active.push(t.status.is_active());
                feasible.push(w.is_feasible(i));
                current_host.push(if t.status.is_active() { t.host } else { None });
                demand_ram.push(t.demand_ram);
                match (t.status.is_active(), t.host) {
                    (true, Some(h)) => {
                        let spec = &sim.hosts()[h];
                        let age = (now - w.created_at) as f64;
                        let slack = ((w.deadline - age) / w.deadline).clamp(0.0, 1.0);
                        embeddings.extend([
                            slack,
                            (t.demand_ips / spec.mips).clamp(0.0, 1.0),
                            (t.demand_ram / spec.ram).clamp(0.0, 1.0),
                            (t.demand_bw / spec.bandwidth).clamp(0.0, 1.0),
                        ]);
                    }
                    _ => embeddings.extend([0.0; EMBED_DIM]),
                }
            }
        }
        let mut ram_outside_slots = vec![0.0; n_hosts];
        for w in sim.workflows() {
            for (i, t) in w.tasks.iter().enumerate() {
                if let (true, Some(h)) = (t.status.is_active(), t.host) {
                    if !index.contains_key(&TaskRef::new(w.id, i)) {
                        ram_outside_slots[h] += t.demand_ram;
                    }
                }
            }
        }
        let mut edges = Vec::new();
        for w in sim.workflows() {
            for &(a, b) in &w.edges {
                if let (Some(&sa), Some(&sb)) = (
                    index.get(&TaskRef::new(w.id, a)),
                    index.get(&TaskRef::new(w.id, b)),
                ) {
                    edges.push((sb, sa));
                    edges.push((sa, sb));
                }
            }
        }
        let mut state = Self {
            n_hosts,
            window_rows: sim.config().window,
            slots,
            active,
            feasible,
            current_host,
            demand_ram,
            host_ram: sim.hosts().iter().map(|h| h.ram).collect(),
            ram_outside_slots,
            embeddings,
            edges,
            window: sim.window(),
            decision: Vec::new(),
        };
        state.decision = state
            .matrix_for(sim.last_decision())
            .expect("simulator hosts are in range");
        state
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn window_width(&self) -> usize {
        self.n_hosts * HOST_FEATURES
    }

    pub fn slot_of(&self, r: &TaskRef) -> Option<usize> {
        self.slots.iter().position(|s| s == r)
    }

    /// `M^S` for `decision` over this state's slots; tasks outside the slots
    /// are ignored.
    pub fn matrix_for(&self, decision: &SchedulingDecision) -> Result<Vec<f64>> {
        let by_slot: BTreeMap<usize, usize> = decision
            .iter()
            .filter_map(|(r, h)| self.slot_of(&r).map(|s| (s, h)))
            .collect();
        decision_matrix(&by_slot, self.n_slots(), self.n_hosts)
    }

    /// The same `(G, W)` with a different `S`.
    pub fn with_decision(&self, decision: &SchedulingDecision) -> Result<Self> {
        Ok(Self {
            decision: self.matrix_for(decision)?,
            ..self.clone()
        })
    }

    /// Slots a decision may cover: active or feasible.
    pub fn schedulable(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_slots()).filter(|&i| self.active[i] || self.feasible[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimConfig;

    #[test]
    fn capture_respects_shapes_and_bounds() {
        let cfg = SimConfig {
            lambda: 3.0,
            seed: 4,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(cfg).unwrap();
        for _ in 0..4 {
            let d: SchedulingDecision = sim.feasible_tasks().into_iter().map(|r| (r, 3)).collect();
            sim.step(&d).unwrap();
        }
        let s = SystemState::capture(&sim, 32);
        assert!(s.n_slots() <= 32);
        assert_eq!(s.embeddings.len(), s.n_slots() * EMBED_DIM);
        assert_eq!(s.decision.len(), s.n_slots() * s.n_hosts);
        assert_eq!(s.window.len(), 3 * s.window_width());
        assert!(s.window.iter().all(|v| (0.0..=1.0).contains(v)));
        for (i, row) in s.decision.chunks(s.n_hosts).enumerate() {
            let sum: f64 = row.iter().sum();
            assert!(sum == 0.0 || sum == 1.0);
            assert_eq!(sum == 1.0, s.active[i]);
            if !s.active[i] {
                assert!(s.embeddings[i * EMBED_DIM..(i + 1) * EMBED_DIM]
                    .iter()
                    .all(|&v| v == 0.0));
            }
        }
        for &(a, b) in &s.edges {
            assert!(s.edges.contains(&(b, a)));
        }
    }

    #[test]
    fn slot_budget_caps_the_graph() {
        let cfg = SimConfig {
            lambda: 8.0,
            seed: 1,
            ..SimConfig::default()
        };
        let sim = Simulator::new(cfg).unwrap();
        let s = SystemState::capture(&sim, 5);
        assert_eq!(s.n_slots(), 5);
        assert!(s.edges.iter().all(|&(a, b)| a < 5 && b < 5));
        let in_slots: f64 = (0..5)
            .filter(|&i| s.active[i])
            .map(|i| s.demand_ram[i])
            .sum();
        let outside: f64 = s.ram_outside_slots.iter().sum();
        let used: f64 = sim.ram_used().iter().sum();
        assert!((in_slots + outside - used).abs() < 1e-9);
    }
}
