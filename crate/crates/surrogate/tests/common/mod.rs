#![allow(dead_code)]

use mcds_core::state::EMBED_DIM;
use mcds_core::{SystemState, TaskRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HOSTS: usize = 4;
pub const WINDOW: usize = 3;

/// A hand-built state: `n` active tasks of one workflow, task `i` on host
/// `i % HOSTS`, random embeddings and window, undirected `edges`.
pub fn state(n: usize, edges: &[(usize, usize)], seed: u64) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = HOSTS * 4;
    let mut decision = vec![0.0; n * HOSTS];
    for i in 0..n {
        decision[i * HOSTS + i % HOSTS] = 1.0;
    }
    SystemState {
        n_hosts: HOSTS,
        window_rows: WINDOW,
        slots: (0..n).map(|i| TaskRef::new(0, i)).collect(),
        active: vec![true; n],
        feasible: vec![false; n],
        current_host: (0..n).map(|i| Some(i % HOSTS)).collect(),
        demand_ram: vec![100.0; n],
        host_ram: vec![4096.0; HOSTS],
        ram_outside_slots: vec![0.0; HOSTS],
        embeddings: (0..n * EMBED_DIM)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect(),
        edges: edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect(),
        window: (0..WINDOW * width)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect(),
        decision,
    }
}

/// Like [`state`] but every task is newly feasible and unassigned.
pub fn fresh_state(n: usize, ram: &[f64], host_ram: &[f64], seed: u64) -> SystemState {
    let mut s = state(n, &[], seed);
    s.n_hosts = host_ram.len();
    s.active = vec![false; n];
    s.feasible = vec![true; n];
    s.current_host = vec![None; n];
    s.demand_ram = ram.to_vec();
    s.host_ram = host_ram.to_vec();
    s.ram_outside_slots = vec![0.0; host_ram.len()];
    s.decision = vec![0.0; n * host_ram.len()];
    s.window.truncate(WINDOW * host_ram.len() * 4);
    s.window.resize(WINDOW * host_ram.len() * 4, 0.5);
    s
}
