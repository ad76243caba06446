//! The search-driven scheduler in its two modes: training (greedy-seeded
//! expansion, rollout values, replay fine-tuning) and MCDS (GOBI-seeded and
//! GOBI-biased expansion, surrogate values).

use std::io::Write;

use mcds_core::sched::rollout;
use mcds_core::{
    GreedyScheduler, IntervalMetrics, RandomScheduler, Scheduler, SchedulingDecision, Simulator,
    SystemState,
};
use mcds_surrogate::{gobi_graph, train_step, ReplayBuffer, Surrogate};
use mcds_tensor::optim::AdamW;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Ablations, SearchConfig};
use crate::error::{Error, Result};
use crate::tree::Tree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Test,
}

/// One selection/expansion round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Child positions from the root down to the expanded leaf.
    pub path: Vec<usize>,
    pub expanded: usize,
}

/// One interval of search, as written to the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub interval: usize,
    pub iterations: Vec<IterationRecord>,
    pub chosen: SchedulingDecision,
    /// `v` of every root child when the choice was made.
    pub root_v: Vec<f64>,
    pub sim_steps: u64,
    pub rollout_steps: u64,
}

/// Simulator calls made on behalf of search, split by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub expansion: u64,
    pub rollout: u64,
}

pub struct MctsScheduler {
    config: SearchConfig,
    ablations: Ablations,
    mode: Mode,
    model: Surrogate,
    optimizer: AdamW,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    tree: Option<Tree>,
    /// Surrogate input and value of the action last returned, waiting for
    /// its real objective.
    pending: Option<(SystemState, f64)>,
    log: Vec<SearchRecord>,
    losses: Vec<f64>,
    steps: StepCounts,
    /// First error raised in `observe`, reported by the next `decide`.
    deferred: Option<Error>,
}

impl MctsScheduler {
    pub fn new(
        config: SearchConfig,
        ablations: Ablations,
        mode: Mode,
        model: Surrogate,
        optimizer: AdamW,
        buffer: ReplayBuffer,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            ablations,
            mode,
            model,
            optimizer,
            buffer,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tree: None,
            pending: None,
            log: Vec::new(),
            losses: Vec::new(),
            steps: StepCounts::default(),
            deferred: None,
        })
    }

    pub fn model(&self) -> &Surrogate {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn into_parts(self) -> (Surrogate, AdamW, ReplayBuffer) {
        (self.model, self.optimizer, self.buffer)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn tree(&self) -> Option<&Tree> {
        self.tree.as_ref()
    }

    pub fn log(&self) -> &[SearchRecord] {
        &self.log
    }

    /// Fine-tuning losses, one per observed interval.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn step_counts(&self) -> StepCounts {
        self.steps
    }

    /// The random stream driving expansion, rollouts and replay sampling.
    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// An error raised while learning from the last outcome and not yet
    /// reported by `decide`.
    pub fn take_deferred(&mut self) -> Option<Error> {
        self.deferred.take()
    }

    /// Drops the retained tree; the next interval searches from scratch.
    pub fn reset_tree(&mut self) {
        self.tree = None;
    }

    /// Writes the search log as JSON lines.
    pub fn write_log(&self, w: &mut impl Write) -> Result<()> {
        for r in &self.log {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn max_slots(&self) -> usize {
        self.model.config().max_slots
    }

    /// Leaves are valued by the surrogate only in test mode without the
    /// no_dsm ablation.
    fn uses_surrogate_values(&self) -> bool {
        self.mode == Mode::Test && !self.ablations.no_dsm
    }

    /// Greedy in training, GOBI from the greedy decision in test mode.
    fn base_decision(&self, sim: &Simulator) -> Result<(SchedulingDecision, bool)> {
        let greedy = GreedyScheduler.decide(sim)?;
        if self.mode == Mode::Train
            || sim.feasible_tasks().is_empty() && sim.active_tasks().is_empty()
        {
            return Ok((greedy, false));
        }
        let state = SystemState::capture(sim, self.max_slots());
        match gobi_graph(&self.model, &state, &greedy, &self.config.gobi) {
            Ok(r) => Ok((r.decision, true)),
            // an active task that cannot stay anywhere: keep the greedy plan
            Err(mcds_surrogate::Error::NoFeasibleHost(_)) => Ok((greedy, false)),
            Err(e) => Err(e.into()),
        }
    }

    /// GOBI from the greedy decision, no tree.
    pub fn gobi_decision(&self, sim: &Simulator) -> Result<SchedulingDecision> {
        let greedy = GreedyScheduler.decide(sim)?;
        let state = SystemState::capture(sim, self.max_slots());
        match gobi_graph(&self.model, &state, &greedy, &self.config.gobi) {
            Ok(r) => Ok(r.decision),
            Err(mcds_surrogate::Error::NoFeasibleHost(_)) => Ok(greedy),
            Err(e) => Err(e.into()),
        }
    }

    fn evaluate_leaves(&mut self, tree: &mut Tree, ids: &[usize]) -> Result<()> {
        if self.uses_surrogate_values() {
            let inputs: Vec<&SystemState> = ids
                .iter()
                .map(|&i| tree.node(i).input.as_ref().expect("children carry inputs"))
                .collect();
            let values = self.model.predict(&inputs)?;
            for (&i, v) in ids.iter().zip(values) {
                tree.set_value(i, v);
            }
        } else {
            for &i in ids {
                let mut policy = RandomScheduler::from_rng(
                    ChaCha8Rng::from_rng(&mut self.rng).expect("chacha seeds"),
                );
                let v = rollout(&tree.node(i).sim, &mut policy, self.config.phi)?;
                self.steps.rollout += self.config.phi as u64;
                tree.set_value(i, v);
            }
        }
        Ok(())
    }

    /// The retained tree if its root is the state `sim` is in, else a fresh
    /// one.
    fn take_tree(&mut self, sim: &Simulator) -> Tree {
        match self.tree.take() {
            Some(mut t)
                if t.node(t.root()).sim.interval() == sim.interval()
                    && t.node(t.root()).sim.last_decision() == sim.last_decision() =>
            {
                t.refresh_root(sim.clone());
                t
            }
            _ => Tree::new(sim.clone()),
        }
    }

    /// ψ rounds of search from `sim`, then the best root child.
    fn search(&mut self, sim: &Simulator) -> Result<SchedulingDecision> {
        let mut tree = self.take_tree(sim);
        let c1 = self.ablations.c1(self.config.c1);
        let c2 = (self.mode == Mode::Test).then(|| self.ablations.c2(self.config.c2));
        let steps_before = tree.sim_steps();
        let rollouts_before = self.steps.rollout;
        let mut iterations = Vec::with_capacity(self.config.psi);
        for _ in 0..self.config.psi {
            let path = tree.select(c1, c2);
            let leaf = *path.last().expect("path holds the root");
            let (base, is_gobi) = self.base_decision(&tree.node(leaf).sim)?;
            let ids = tree.expand(
                leaf,
                base,
                is_gobi,
                self.config.k_exp,
                self.max_slots(),
                &mut self.rng,
            )?;
            self.evaluate_leaves(&mut tree, &ids)?;
            tree.backpropagate(&path);
            iterations.push(IterationRecord {
                path: path
                    .windows(2)
                    .map(|w| {
                        tree.node(w[0])
                            .children
                            .iter()
                            .position(|&c| c == w[1])
                            .expect("child")
                    })
                    .collect(),
                expanded: ids.len(),
            });
        }
        let root_v: Vec<f64> = tree
            .node(tree.root())
            .children
            .iter()
            .map(|&c| tree.node(c).v)
            .collect();
        let expansion_steps = tree.sim_steps() - steps_before;
        self.steps.expansion += expansion_steps;
        let chosen = tree.update_root(self.config.node_budget)?;
        let input = chosen.input.expect("root children carry inputs");
        self.pending = Some((input, chosen.v));
        self.log.push(SearchRecord {
            interval: sim.interval(),
            iterations,
            chosen: chosen.decision.clone(),
            root_v,
            sim_steps: expansion_steps,
            rollout_steps: self.steps.rollout - rollouts_before,
        });
        self.tree = Some(tree);
        Ok(chosen.decision)
    }

    /// Buffers the datapoint for the action just taken and fine-tunes.
    fn learn(&mut self, objective: f64) -> Result<()> {
        let Some((input, v)) = self.pending.take() else {
            return Ok(());
        };
        let target = ((objective + v) / 2.0).clamp(0.0, 1.0);
        // in test mode the new point trains together with replayed ones:
        // batch norm needs more than one sample to normalise with
        let replay: Vec<(SystemState, f64)> = match self.mode {
            Mode::Test if self.config.fine_tune => self
                .buffer
                .sample(self.config.batch_size - 1, &mut self.rng)
                .into_iter()
                .map(|s| (s.state.clone(), s.target))
                .collect(),
            _ => Vec::new(),
        };
        self.buffer.push(input.clone(), target)?;
        if !self.config.fine_tune {
            return Ok(());
        }
        let batch: Vec<(SystemState, f64)> = match self.mode {
            Mode::Train => self
                .buffer
                .sample(self.config.batch_size, &mut self.rng)
                .into_iter()
                .map(|s| (s.state.clone(), s.target))
                .collect(),
            Mode::Test => std::iter::once((input, target)).chain(replay).collect(),
        };
        let refs: Vec<(&SystemState, f64)> = batch.iter().map(|(s, t)| (s, *t)).collect();
        let loss = train_step(&mut self.model, &mut self.optimizer, &refs)?;
        self.losses.push(loss);
        Ok(())
    }
}

impl Scheduler for MctsScheduler {
    fn name(&self) -> &str {
        if self.ablations.no_mcts {
            "gobi_only"
        } else {
            "mcds"
        }
    }

    fn decide(&mut self, sim: &Simulator) -> mcds_core::Result<SchedulingDecision> {
        if let Some(e) = self.deferred.take() {
            return Err(e.into());
        }
        if self.ablations.no_mcts {
            return Ok(self.gobi_decision(sim)?);
        }
        Ok(self.search(sim)?)
    }

    fn observe(&mut self, metrics: &IntervalMetrics) {
        if let Err(e) = self.learn(metrics.objective) {
            self.deferred.get_or_insert(e);
        }
    }
}
