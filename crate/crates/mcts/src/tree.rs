//! Arena-backed search tree over scheduling decisions.
//!
//! A node stands for the system after one decision: `q` is the objective of
//! the interval that decision ran, `v` the value estimate, and `sim` the
//! simulator right after the step, from which the node's own children are
//! expanded.

use mcds_core::{SchedulingDecision, Simulator, SystemState, TaskRef};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Node {
    /// Decision that led here; for a fresh root, the simulator's last one.
    pub decision: SchedulingDecision,
    /// Surrogate input for this node: `(G, W)` right after `decision` ran,
    /// with `S = decision`. `None` for a fresh root.
    pub input: Option<SystemState>,
    pub sim: Simulator,
    pub q: f64,
    pub v: f64,
    pub n: u64,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    /// Position among `children` of the GOBI proposal, if one was made.
    pub gobi_child: Option<usize>,
}

impl Node {
    fn new(
        decision: SchedulingDecision,
        input: Option<SystemState>,
        sim: Simulator,
        q: f64,
        parent: Option<usize>,
    ) -> Self {
        Self {
            decision,
            input,
            sim,
            q,
            v: 0.0,
            n: 1,
            children: Vec::new(),
            parent,
            gobi_child: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// The root child picked to act on.
#[derive(Debug, Clone)]
pub struct Chosen {
    pub index: usize,
    pub decision: SchedulingDecision,
    pub input: Option<SystemState>,
    pub v: f64,
}

/// `√(c1 · ln n / n_i)`.
pub fn exploration_bonus(c1: f64, n: u64, n_i: u64) -> f64 {
    (c1 * (n as f64).ln() / n_i as f64).sqrt()
}

/// `(q + Σ n_i v_i / Σ n_i) / 2` over `(v_i, n_i)` pairs.
pub fn backed_up_value(q: f64, children: impl IntoIterator<Item = (f64, u64)>) -> f64 {
    let (mut weighted, mut total) = (0.0, 0.0);
    for (v, n) in children {
        weighted += n as f64 * v;
        total += n as f64;
    }
    (q + weighted / total) / 2.0
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    root: usize,
    sim_steps: u64,
}

impl Tree {
    pub fn new(sim: Simulator) -> Self {
        let decision = sim.last_decision().clone();
        Self {
            nodes: vec![Node::new(decision, None, sim, 0.0, None)],
            root: 0,
            sim_steps: 0,
        }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    /// Direct access for callers that seed statistics by hand.
    pub fn node_mut(&mut self, i: usize) -> &mut Node {
        &mut self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes.iter().enumerate()
    }

    /// Simulator steps taken by expansions since the tree was built.
    pub fn sim_steps(&self) -> u64 {
        self.sim_steps
    }

    /// Replaces the root's simulator, e.g. with the real environment after
    /// acting.
    pub fn refresh_root(&mut self, sim: Simulator) {
        self.nodes[self.root].sim = sim;
    }

    pub fn set_value(&mut self, i: usize, v: f64) {
        self.nodes[i].v = v;
    }

    /// Walks from the root to a leaf. At each node takes the child with the
    /// largest `v_i + √(c1 ln n / n_i)` plus `c2` if it is the GOBI child
    /// (`c2 = None` outside test mode). Every node on the path, root
    /// included, gains a visit before its children are compared. Ties go to
    /// the lowest index.
    pub fn select(&mut self, c1: f64, c2: Option<f64>) -> Vec<usize> {
        let mut node = self.root;
        self.nodes[node].n += 1;
        let mut path = vec![node];
        while !self.nodes[node].is_leaf() {
            let parent = &self.nodes[node];
            let mut best: Option<(usize, f64)> = None;
            for (pos, &c) in parent.children.iter().enumerate() {
                let child = &self.nodes[c];
                let bias = match (c2, parent.gobi_child) {
                    (Some(w), Some(g)) if g == pos => w,
                    _ => 0.0,
                };
                let score = child.v + exploration_bonus(c1, parent.n, child.n) + bias;
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((c, score));
                }
            }
            node = best.expect("non-leaf has children").0;
            self.nodes[node].n += 1;
            path.push(node);
        }
        path
    }

    /// Creates children of `leaf` from `base` plus up to `k_exp − 1`
    /// single-task variants, each stepped once on a clone of the leaf's
    /// simulator. Variants move one feasible task of `base` to another host
    /// with room for it; they are drawn without replacement. A leaf with no
    /// tasks at all gets a single empty-decision child. Returns the new
    /// node indices in candidate order.
    pub fn expand(
        &mut self,
        leaf: usize,
        base: SchedulingDecision,
        base_is_gobi: bool,
        k_exp: usize,
        max_slots: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<usize>> {
        if k_exp == 0 {
            return Err(Error::NoFeasibleAction);
        }
        let sim = &self.nodes[leaf].sim;
        let idle = sim.feasible_tasks().is_empty() && sim.active_tasks().is_empty();
        let candidates = if idle {
            vec![SchedulingDecision::new()]
        } else {
            let mut c = variants(sim, &base, k_exp - 1, rng);
            c.insert(0, base);
            c
        };
        let mut stepped = Vec::with_capacity(candidates.len());
        for d in candidates {
            let mut child_sim = sim.clone();
            let q = child_sim.step(&d)?.metrics.objective;
            let input = SystemState::capture(&child_sim, max_slots);
            stepped.push(Node::new(d, Some(input), child_sim, q, Some(leaf)));
        }
        self.sim_steps += stepped.len() as u64;
        let first = self.nodes.len();
        self.nodes.extend(stepped);
        let ids: Vec<usize> = (first..self.nodes.len()).collect();
        self.nodes[leaf].children = ids.clone();
        self.nodes[leaf].gobi_child = (base_is_gobi && !idle).then_some(0);
        Ok(ids)
    }

    /// Recomputes `v` bottom-up along `path` for every node that has
    /// children; leaves keep theirs.
    pub fn backpropagate(&mut self, path: &[usize]) {
        for &i in path.iter().rev() {
            if self.nodes[i].is_leaf() {
                continue;
            }
            let kids: Vec<(f64, u64)> = self.nodes[i]
                .children
                .iter()
                .map(|&c| (self.nodes[c].v, self.nodes[c].n))
                .collect();
            self.nodes[i].v = backed_up_value(self.nodes[i].q, kids);
        }
    }

    /// The root child with the largest `v` (ties to the lowest index).
    pub fn best_child(&self) -> Result<Chosen> {
        let root = &self.nodes[self.root];
        let mut best: Option<(usize, f64)> = None;
        for (pos, &c) in root.children.iter().enumerate() {
            let v = self.nodes[c].v;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((pos, v));
            }
        }
        let (index, v) = best.ok_or(Error::RootNotExpanded)?;
        let node = &self.nodes[root.children[index]];
        Ok(Chosen {
            index,
            decision: node.decision.clone(),
            input: node.input.clone(),
            v,
        })
    }

    /// Picks [`Tree::best_child`] and makes it the root, dropping every
    /// other branch. If the kept subtree exceeds `node_budget` nodes only
    /// the new root and its children survive.
    pub fn update_root(&mut self, node_budget: usize) -> Result<Chosen> {
        let chosen = self.best_child()?;
        let new_root = self.nodes[self.root].children[chosen.index];
        self.reroot(new_root, node_budget);
        Ok(chosen)
    }

    fn reroot(&mut self, new_root: usize, node_budget: usize) {
        let mut order = vec![new_root];
        let mut i = 0;
        while i < order.len() {
            order.extend(self.nodes[order[i]].children.iter().copied());
            i += 1;
        }
        let keep_all = order.len() <= node_budget.max(1);
        if !keep_all {
            order.truncate(1 + self.nodes[new_root].children.len());
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let mut old_nodes: Vec<Option<Node>> = std::mem::take(&mut self.nodes)
            .into_iter()
            .map(Some)
            .collect();
        self.nodes = order
            .iter()
            .map(|&old| {
                let mut n = old_nodes[old].take().expect("each node kept once");
                n.parent = n.parent.map(|p| remap[p]).filter(|&p| p != usize::MAX);
                if keep_all || old == new_root {
                    n.children = n.children.iter().map(|c| remap[*c]).collect();
                } else {
                    n.children.clear();
                    n.gobi_child = None;
                }
                n
            })
            .collect();
        self.root = 0;
    }
}

/// Up to `count` distinct single-task reassignments of `base`, drawn in
/// random order from (feasible task × other host) pairs whose host has RAM
/// for the task once `base` is applied.
fn variants(
    sim: &Simulator,
    base: &SchedulingDecision,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<SchedulingDecision> {
    if count == 0 {
        return Vec::new();
    }
    let hosts = sim.hosts();
    let mut used = sim.ram_used();
    for (r, h) in base.iter() {
        let Some(t) = sim.task(&r) else { continue };
        if let (true, Some(from)) = (t.status.is_active(), t.host) {
            used[from] -= t.demand_ram;
        }
        used[h] += t.demand_ram;
    }
    let mut pairs: Vec<(TaskRef, usize)> = sim
        .feasible_tasks()
        .into_iter()
        .flat_map(|r| (0..hosts.len()).map(move |h| (r, h)))
        .filter(|&(r, h)| base.get(&r) != Some(h))
        .collect();
    pairs.shuffle(rng);
    let mut out = Vec::with_capacity(count);
    for (r, h) in pairs {
        if out.len() == count {
            break;
        }
        // whether or not `base` placed the task elsewhere, only the target
        // host's headroom matters
        let demand = sim.task(&r).expect("feasible task exists").demand_ram;
        if used[h] + demand > hosts[h].ram {
            continue;
        }
        let mut d = base.clone();
        d.assign(r, h);
        out.push(d);
    }
    out
}
