//! The surrogate network.
//!
//! Three encoders feed one head. The task graph goes through gated graph
//! convolutions and a padded feed-forward layer, the decision matrix through
//! a per-task layer pooled by attention over tasks, and the host-utilisation
//! window through causal then plain self-attention. The window encoding is
//! instance-normalised and re-styled by the graph and decision encodings
//! before a sigmoid readout.

use std::path::Path;
use std::sync::Arc;

use mcds_core::sim::HOST_FEATURES;
use mcds_core::state::EMBED_DIM;
use mcds_core::{SimConfig, SystemState};
use mcds_tensor::checkpoint::Checkpoint;
use mcds_tensor::nn::{
    AdaIn, BatchNorm, GruCell, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, NORM_EPS,
};
use mcds_tensor::optim::AdamW;
use mcds_tensor::{no_grad, Tensor, MASK_VALUE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub hidden: usize,
    pub heads: usize,
    /// Graph convolution rounds.
    pub p_conv: usize,
    /// Graph slots; smaller graphs are padded to this size.
    pub max_slots: usize,
    pub n_hosts: usize,
    /// Rows of the utilisation window.
    pub window: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            heads: 2,
            p_conv: 2,
            max_slots: 32,
            n_hosts: 4,
            window: 3,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    /// Defaults sized to the simulator's hosts and window.
    pub fn for_sim(sim: &SimConfig) -> Self {
        Self {
            n_hosts: sim.n_hosts(),
            window: sim.window,
            ..Self::default()
        }
    }

    pub fn window_width(&self) -> usize {
        self.n_hosts * HOST_FEATURES
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.hidden == 0 || self.max_slots == 0 || self.n_hosts == 0 || self.window == 0 {
            return bad(format!("zero-sized dimension in {self:?}"));
        }
        if !self.window_width().is_multiple_of(self.heads.max(1)) || self.heads == 0 {
            return bad(format!(
                "{} heads do not divide the window width {}",
                self.heads,
                self.window_width()
            ));
        }
        Ok(())
    }
}

/// The parts of a forward pass that do not depend on the decision, computed
/// once so that many decisions can be scored against the same `(G, W)`.
#[derive(Debug, Clone)]
pub struct Context {
    graph: Tensor,
    window: Tensor,
    counts: Vec<usize>,
}

impl Context {
    pub fn batch(&self) -> usize {
        self.counts.len()
    }

    /// Decision rows each sample expects.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    config: SurrogateConfig,
    embed: Linear,
    message: Vec<Parameter>,
    gru: GruCell,
    graph_ff: Linear,
    graph_bn: BatchNorm,
    decision_ff: Linear,
    decision_attn: Linear,
    causal_attn: MultiHeadAttention,
    norm: LayerNorm,
    attn: MultiHeadAttention,
    adain: AdaIn,
    head: Linear,
}

impl Surrogate {
    pub fn new(config: SurrogateConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let d = config.window_width();
        let content = config.window * d;
        let bound = 1.0 / (h as f64).sqrt();
        Ok(Self {
            embed: Linear::new("embed", EMBED_DIM, h, &mut rng)?,
            message: (0..config.p_conv)
                .map(|k| Parameter::uniform(format!("message{k}"), &[h, h], bound, &mut rng))
                .collect::<Result<_, _>>()?,
            gru: GruCell::new("gru", h, h, &mut rng)?,
            graph_ff: Linear::new("graph_ff", config.max_slots * h, h, &mut rng)?,
            graph_bn: BatchNorm::new("graph_bn", h)?,
            decision_ff: Linear::new("decision_ff", config.n_hosts, h, &mut rng)?,
            decision_attn: Linear::new("decision_attn", h, 1, &mut rng)?,
            causal_attn: MultiHeadAttention::new("causal_attn", d, config.heads, &mut rng)?,
            norm: LayerNorm::new("window_norm", d)?,
            attn: MultiHeadAttention::new("attn", d, config.heads, &mut rng)?,
            adain: AdaIn::new("adain", 2 * h, content, &mut rng)?,
            head: Linear::new("head", content, 1, &mut rng)?,
            config,
        })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    /// Predictions `[B, 1]` in eval mode (batch norm uses running
    /// statistics).
    pub fn forward(&self, states: &[&SystemState]) -> Result<Tensor> {
        let ctx = self.context_with(states, |pre| Ok(self.graph_bn.forward_eval(pre)?))?;
        self.score(&ctx, &stacked_decisions(states)?)
    }

    /// Predictions `[B, 1]` in train mode: batch norm normalises with the
    /// batch's own statistics and updates its running estimates.
    pub fn forward_train(&mut self, states: &[&SystemState]) -> Result<Tensor> {
        let pre = self.graph_features(states)?;
        let graph = self.graph_bn.forward_train(&pre)?.relu()?;
        let ctx = Context {
            graph,
            window: self.window_features(states)?,
            counts: states.iter().map(|s| s.n_slots()).collect(),
        };
        self.score(&ctx, &stacked_decisions(states)?)
    }

    /// Eval-mode predictions without building a backward graph.
    pub fn predict(&self, states: &[&SystemState]) -> Result<Vec<f64>> {
        no_grad(|| self.forward(states)).map(|t| t.to_vec())
    }

    /// The decision-independent half of an eval-mode forward pass, computed
    /// without gradients.
    pub fn context(&self, states: &[&SystemState]) -> Result<Context> {
        no_grad(|| self.context_with(states, |pre| Ok(self.graph_bn.forward_eval(pre)?)))
    }

    fn context_with(
        &self,
        states: &[&SystemState],
        norm: impl Fn(&Tensor) -> Result<Tensor>,
    ) -> Result<Context> {
        let pre = self.graph_features(states)?;
        Ok(Context {
            graph: norm(&pre)?.relu()?,
            window: self.window_features(states)?,
            counts: states.iter().map(|s| s.n_slots()).collect(),
        })
    }

    /// Predictions `[B, 1]` for `decisions`, the row-stacked `M^S` of every
    /// sample in `ctx` (`[Σ slots, n_hosts]`).
    pub fn score(&self, ctx: &Context, decisions: &Tensor) -> Result<Tensor> {
        let e_s = self.encode_decision(decisions, &ctx.counts)?;
        let style = Tensor::concat(&[&ctx.graph, &e_s], 1)?;
        Ok(self
            .head
            .forward(&self.adain.forward_standardized(&ctx.window, &style)?)?
            .sigmoid()?)
    }

    fn check(&self, s: &SystemState) -> Result<()> {
        let c = &self.config;
        let n = s.n_slots();
        let problem = if s.n_hosts != c.n_hosts {
            Some(format!("{} hosts, model expects {}", s.n_hosts, c.n_hosts))
        } else if s.window_rows != c.window || s.window.len() != c.window * c.window_width() {
            Some(format!(
                "window of {} values, model expects {}×{}",
                s.window.len(),
                c.window,
                c.window_width()
            ))
        } else if n > c.max_slots {
            Some(format!("{n} slots, model holds {}", c.max_slots))
        } else if s.embeddings.len() != n * EMBED_DIM || s.decision.len() != n * c.n_hosts {
            Some(format!(
                "embedding or decision size does not match {n} slots"
            ))
        } else if s.edges.iter().any(|&(a, b)| a >= n || b >= n) {
            Some("edge endpoint outside the slots".to_string())
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(Error::StateShape(p)))
    }

    /// Validates `states` and row-stacks their nodes, edges and padded
    /// slot index. Index entries past a sample's slots point at one extra
    /// zero node after all real ones.
    fn stack_graph(
        &self,
        states: &[&SystemState],
    ) -> Result<(Tensor, Arc<Vec<(usize, usize)>>, Vec<usize>)> {
        if states.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for s in states {
            self.check(s)?;
        }
        let p = self.config.max_slots;
        let total: usize = states.iter().map(|s| s.n_slots()).sum();
        let mut emb = Vec::with_capacity((total + 1) * EMBED_DIM);
        let mut pairs = Vec::new();
        let mut index = Vec::with_capacity(states.len() * p);
        let mut offset = 0;
        for s in states {
            emb.extend_from_slice(&s.embeddings);
            pairs.extend(s.edges.iter().map(|&(d, src)| (d + offset, src + offset)));
            index.extend((0..p).map(|j| if j < s.n_slots() { offset + j } else { total }));
            offset += s.n_slots();
        }
        emb.extend([0.0; EMBED_DIM]);
        Ok((
            Tensor::new(emb, &[total + 1, EMBED_DIM])?,
            Arc::new(pairs),
            index,
        ))
    }

    fn convolve(&self, nodes: &Tensor, pairs: &Arc<Vec<(usize, usize)>>) -> Result<Tensor> {
        let mut r = self.embed.forward(nodes)?.tanh()?;
        for w in &self.message {
            let x = r.aggregate_rows(pairs)?.matmul(&w.var())?;
            r = self.gru.forward(&x, &r)?;
        }
        Ok(r)
    }

    /// Node representations after the last convolution round, all samples'
    /// slots stacked, `[Σ slots, H]`.
    pub fn node_states(&self, states: &[&SystemState]) -> Result<Tensor> {
        let (nodes, pairs, _) = self.stack_graph(states)?;
        let r = self.convolve(&nodes, &pairs)?;
        let total = r.shape()[0] - 1;
        Ok(r.slice(0, 0, total)?)
    }

    /// Graph encoding before batch norm, `[B, H]`.
    fn graph_features(&self, states: &[&SystemState]) -> Result<Tensor> {
        let (nodes, pairs, index) = self.stack_graph(states)?;
        let r = self.convolve(&nodes, &pairs)?;
        let (h, p) = (self.config.hidden, self.config.max_slots);
        let padded = r.gather_rows(&index)?.reshape(&[states.len(), p * h])?;
        Ok(self.graph_ff.forward(&padded)?)
    }

    /// Output of the causal attention block, `[B, window, width]`.
    pub fn masked_window(&self, states: &[&SystemState]) -> Result<Tensor> {
        self.causal_attn
            .forward(&self.stack_window(states)?, true)
            .map_err(Into::into)
    }

    fn stack_window(&self, states: &[&SystemState]) -> Result<Tensor> {
        for s in states {
            self.check(s)?;
        }
        let (k, d) = (self.config.window, self.config.window_width());
        let data: Vec<f64> = states
            .iter()
            .flat_map(|s| s.window.iter().copied())
            .collect();
        Ok(Tensor::new(data, &[states.len(), k, d])?)
    }

    /// `e^W`, flattened to `[B, window × width]`.
    pub fn encode_window(&self, states: &[&SystemState]) -> Result<Tensor> {
        let w = self.stack_window(states)?;
        let w2 = self
            .norm
            .forward(&w.add(&self.causal_attn.forward(&w, true)?)?)?;
        let e_w = w2.add(&self.attn.forward(&w2, false)?)?;
        Ok(e_w.reshape(&[
            states.len(),
            self.config.window * self.config.window_width(),
        ])?)
    }

    /// Standardised window encoding, the content input of AdaIn.
    fn window_features(&self, states: &[&SystemState]) -> Result<Tensor> {
        let n = self.config.window * self.config.window_width();
        Ok(self.encode_window(states)?.standardize(n, NORM_EPS)?)
    }

    /// Per-task decision rows `M = ReLU(FF(M^S))`.
    pub fn decision_rows(&self, decisions: &Tensor) -> Result<Tensor> {
        Ok(self.decision_ff.forward(decisions)?.relu()?)
    }

    /// Attention-pooled decision encoding `e^S`, `[B, H]`, from row-stacked
    /// `M^S` with `counts[b]` rows per sample. A sample without tasks pools
    /// only padding, which encodes the all-zero row.
    pub fn encode_decision(&self, decisions: &Tensor, counts: &[usize]) -> Result<Tensor> {
        let (h, p, n_hosts) = (
            self.config.hidden,
            self.config.max_slots,
            self.config.n_hosts,
        );
        let total: usize = counts.iter().sum();
        if decisions.shape() != [total, n_hosts] || counts.iter().any(|&n| n > p) {
            return Err(Error::StateShape(format!(
                "decision input {:?} for {counts:?} rows of {n_hosts} hosts",
                decisions.shape()
            )));
        }
        let rows = Tensor::concat(&[decisions, &Tensor::zeros(&[1, n_hosts])], 0)?;
        let m = self.decision_rows(&rows)?;
        let logits = self.decision_attn.forward(&m)?;
        let mut index = Vec::with_capacity(counts.len() * p);
        let mut mask = Vec::with_capacity(counts.len() * p);
        let mut offset = 0;
        for &n in counts {
            for j in 0..p {
                index.push(if j < n { offset + j } else { total });
                mask.push(j >= n && n > 0);
            }
            offset += n;
        }
        let b = counts.len();
        let weights = logits
            .gather_rows(&index)?
            .reshape(&[b, p])?
            .masked_fill(&mask, MASK_VALUE)?
            .softmax()?
            .reshape(&[b, 1, p])?;
        let m = m.gather_rows(&index)?.reshape(&[b, p, h])?;
        Ok(weights.bmm(&m)?.reshape(&[b, h])?)
    }

    pub fn save(&self, path: &Path, optimizer: Option<&AdamW>) -> Result<()> {
        Ok(Checkpoint::capture(self, optimizer).save(path)?)
    }

    /// Restores weights saved by [`Surrogate::save`] into a model built
    /// from `config`; returns the optimizer state if one was saved.
    pub fn load(config: SurrogateConfig, path: &Path) -> Result<(Self, Option<AdamW>)> {
        let mut model = Self::new(config)?;
        let ckpt = Checkpoint::load(path)?;
        ckpt.restore(&mut model)?;
        Ok((model, ckpt.optimizer))
    }
}

/// Every sample's `M^S`, stacked by rows into a constant.
pub fn stacked_decisions(states: &[&SystemState]) -> Result<Tensor> {
    let n_hosts = states.first().map_or(0, |s| s.n_hosts);
    let data: Vec<f64> = states
        .iter()
        .flat_map(|s| s.decision.iter().copied())
        .collect();
    let rows = data.len() / n_hosts.max(1);
    Ok(Tensor::new(data, &[rows, n_hosts])?)
}

impl Module for Surrogate {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.embed.parameters();
        out.extend(self.message.iter());
        out.extend(self.gru.parameters());
        out.extend(self.graph_ff.parameters());
        out.extend(self.graph_bn.parameters());
        out.extend(self.decision_ff.parameters());
        out.extend(self.decision_attn.parameters());
        out.extend(self.causal_attn.parameters());
        out.extend(self.norm.parameters());
        out.extend(self.attn.parameters());
        out.extend(self.adain.parameters());
        out.extend(self.head.parameters());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.embed.parameters_mut();
        out.extend(self.message.iter_mut());
        out.extend(self.gru.parameters_mut());
        out.extend(self.graph_ff.parameters_mut());
        out.extend(self.graph_bn.parameters_mut());
        out.extend(self.decision_ff.parameters_mut());
        out.extend(self.decision_attn.parameters_mut());
        out.extend(self.causal_attn.parameters_mut());
        out.extend(self.norm.parameters_mut());
        out.extend(self.attn.parameters_mut());
        out.extend(self.adain.parameters_mut());
        out.extend(self.head.parameters_mut());
        out
    }
}
