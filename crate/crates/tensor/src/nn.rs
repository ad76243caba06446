//! Parameters and the layers the surrogate model is assembled from.

use rand::Rng;

use crate::error::{mismatch, Result, TensorError};
use crate::tensor::{params_frozen, Tensor};

pub const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// A named leaf tensor owned by a module.
///
/// Non-trainable parameters (batch-norm running statistics) are saved in
/// checkpoints but never updated by the optimizer.
#[derive(Debug)]
pub struct Parameter {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            tensor: Tensor::leaf(data, shape)?,
            trainable: true,
        })
    }

    pub fn buffer(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            tensor: Tensor::new(data, shape)?,
            trainable: false,
        })
    }

    pub fn uniform(
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(name, data, shape)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn values(&self) -> &[f64] {
        self.tensor.data()
    }

    /// The tensor to use in a forward pass. Constant when parameters are
    /// frozen on this thread or the parameter is not trainable.
    pub fn var(&self) -> Tensor {
        if self.trainable && !params_frozen() {
            self.tensor.clone()
        } else {
            self.tensor.detach()
        }
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tensor.grad()
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad();
    }

    /// Replaces the values; any accumulated gradient is dropped.
    pub fn set_values(&mut self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.tensor.numel() {
            return Err(mismatch(
                "set_values",
                &[self.tensor.shape(), &[data.len()]],
            ));
        }
        let shape = self.tensor.shape().to_vec();
        self.tensor = if self.trainable {
            Tensor::leaf(data, &shape)?
        } else {
            Tensor::new(data, &shape)?
        };
        Ok(())
    }
}

impl Clone for Parameter {
    /// Shares the values but not the gradient slot.
    fn clone(&self) -> Self {
        let tensor = if self.trainable {
            self.tensor.with_requires_grad()
        } else {
            self.tensor.detach()
        };
        Self {
            name: self.name.clone(),
            tensor,
            trainable: self.trainable,
        }
    }
}

pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.values().len()).sum()
    }
}

/// `y = x W + b` with `W: [in, out]`. Inputs of rank > 2 are flattened over
/// the leading axes.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Ok(Self {
            weight: Parameter::uniform(format!("{name}.weight"), &[fan_in, fan_out], bound, rng)?,
            bias: Parameter::uniform(format!("{name}.bias"), &[fan_out], bound, rng)?,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        let last = *s.last().ok_or_else(|| mismatch("linear", &[s]))?;
        if last != self.fan_in() {
            return Err(mismatch("linear", &[s, self.weight.shape()]));
        }
        let rows = x.numel() / last.max(1);
        let flat = if s.len() == 2 {
            x.clone()
        } else {
            x.reshape(&[rows, last])?
        };
        let y = flat.matmul(&self.weight.var())?.add(&self.bias.var())?;
        if s.len() == 2 {
            Ok(y)
        } else {
            let mut shape = s.to_vec();
            *shape.last_mut().expect("non-empty") = self.fan_out();
            y.reshape(&shape)
        }
    }
}

impl Module for Linear {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Normalizes over the last axis, then applies a learned affine map.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: Parameter::new(format!("{name}.gamma"), vec![1.0; dim], &[dim])?,
            beta: Parameter::new(format!("{name}.beta"), vec![0.0; dim], &[dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dim = self.gamma.shape()[0];
        if x.shape().last() != Some(&dim) {
            return Err(mismatch("layer_norm", &[x.shape(), &[dim]]));
        }
        x.standardize(dim, NORM_EPS)?
            .mul(&self.gamma.var())?
            .add(&self.beta.var())
    }
}

impl Module for LayerNorm {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Batch normalization over `[batch, features]` inputs.
///
/// Training mode normalizes with the batch statistics and updates the
/// running estimates (skipped for a batch of one, whose variance is
/// undefined). Eval mode is the fixed affine map given by the running
/// estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Parameter,
    pub running_var: Parameter,
}

impl BatchNorm {
    pub fn new(name: &str, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: Parameter::new(format!("{name}.gamma"), vec![1.0; features], &[features])?,
            beta: Parameter::new(format!("{name}.beta"), vec![0.0; features], &[features])?,
            running_mean: Parameter::buffer(
                format!("{name}.running_mean"),
                vec![0.0; features],
                &[features],
            )?,
            running_var: Parameter::buffer(
                format!("{name}.running_var"),
                vec![1.0; features],
                &[features],
            )?,
        })
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let f = self.gamma.shape()[0];
        match x.shape() {
            &[b, ff] if ff == f && b > 0 => Ok((b, f)),
            s => Err(mismatch("batch_norm", &[s, &[f]])),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, f) = self.check(x)?;
        if b > 1 {
            let d = x.data();
            let mut mean = vec![0.0; f];
            let mut var = vec![0.0; f];
            for row in d.chunks(f) {
                mean.iter_mut()
                    .zip(row)
                    .for_each(|(m, v)| *m += v / b as f64);
            }
            for row in d.chunks(f) {
                for j in 0..f {
                    var[j] += (row[j] - mean[j]).powi(2) / (b - 1) as f64;
                }
            }
            let rm: Vec<f64> = self
                .running_mean
                .values()
                .iter()
                .zip(&mean)
                .map(|(r, m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m)
                .collect();
            let rv: Vec<f64> = self
                .running_var
                .values()
                .iter()
                .zip(&var)
                .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v)
                .collect();
            self.running_mean.set_values(rm)?;
            self.running_var.set_values(rv)?;
        }
        x.transpose()?
            .standardize(b, NORM_EPS)?
            .transpose()?
            .mul(&self.gamma.var())?
            .add(&self.beta.var())
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let inv: Vec<f64> = self
            .running_var
            .values()
            .iter()
            .map(|v| 1.0 / (v + NORM_EPS).sqrt())
            .collect();
        let shift: Vec<f64> = self
            .running_mean
            .values()
            .iter()
            .zip(&inv)
            .map(|(m, i)| -m * i)
            .collect();
        let f = inv.len();
        x.mul(&Tensor::new(inv, &[f])?)?
            .add(&Tensor::new(shift, &[f])?)?
            .mul(&self.gamma.var())?
            .add(&self.beta.var())
    }
}

impl Module for BatchNorm {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
        ]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

/// Gated recurrent unit cell, gate order `[reset, update, new]`:
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = n + z ⊙ (h − n)
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
}

impl GruCell {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        Ok(Self {
            input: gate_linear(&format!("{name}.input"), input, 3 * hidden, bound, rng)?,
            hidden: gate_linear(&format!("{name}.hidden"), hidden, 3 * hidden, bound, rng)?,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden.fan_in()
    }

    /// `x: [n, input]`, `h: [n, hidden]`.
    pub fn forward(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let hs = self.hidden_size();
        let gi = self.input.forward(x)?;
        let gh = self.hidden.forward(h)?;
        let gate = |t: &Tensor, k: usize| t.slice(1, k * hs, (k + 1) * hs);
        let r = gate(&gi, 0)?.add(&gate(&gh, 0)?)?.sigmoid()?;
        let z = gate(&gi, 1)?.add(&gate(&gh, 1)?)?.sigmoid()?;
        let n = gate(&gi, 2)?.add(&r.mul(&gate(&gh, 2)?)?)?.tanh()?;
        n.add(&z.mul(&h.sub(&n)?)?)
    }
}

fn gate_linear(
    name: &str,
    fan_in: usize,
    fan_out: usize,
    bound: f64,
    rng: &mut impl Rng,
) -> Result<Linear> {
    Ok(Linear {
        weight: Parameter::uniform(format!("{name}.weight"), &[fan_in, fan_out], bound, rng)?,
        bias: Parameter::uniform(format!("{name}.bias"), &[fan_out], bound, rng)?,
    })
}

impl Module for GruCell {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.input.parameters();
        p.extend(self.hidden.parameters());
        p
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.input.parameters_mut();
        p.extend(self.hidden.parameters_mut());
        p
    }
}

/// Multi-head self-attention over a `[tokens, dim]` sequence.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(TensorError::InvalidArgument {
                op: "multi_head_attention",
                detail: format!("dim {dim} is not divisible by {heads} heads"),
            });
        }
        Ok(Self {
            query: Linear::new(&format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(&format!("{name}.key"), dim, dim, rng)?,
            value: Linear::new(&format!("{name}.value"), dim, dim, rng)?,
            output: Linear::new(&format!("{name}.output"), dim, dim, rng)?,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// With `causal`, token `t` only attends to tokens `0..=t`.
    /// Self-attention over `x` of shape `[T, D]` or `[B, T, D]`.
    pub fn forward(&self, x: &Tensor, causal: bool) -> Result<Tensor> {
        let d_model = self.query.fan_in();
        let (b, t) = match x.shape() {
            &[t, d] if d == d_model => (None, t),
            &[b, t, d] if d == d_model => (Some(b), t),
            s => return Err(mismatch("multi_head_attention", &[s, &[d_model]])),
        };
        let x3 = match b {
            Some(_) => x.clone(),
            None => x.reshape(&[1, t, d_model])?,
        };
        let batch = b.unwrap_or(1);
        let dh = d_model / self.heads;
        let q = self.query.forward(&x3)?;
        let k = self.key.forward(&x3)?;
        let v = self.value.forward(&x3)?;
        let mask: Vec<bool> = (0..batch * t * t)
            .map(|i| causal && i % t > (i / t) % t)
            .collect();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let scores = q
                .slice(2, lo, hi)?
                .bmm(&k.slice(2, lo, hi)?.transpose()?)?
                .scale(scale)?;
            let scores = if causal {
                scores.masked_fill(&mask, crate::ops::MASK_VALUE)?
            } else {
                scores
            };
            outs.push(scores.softmax()?.bmm(&v.slice(2, lo, hi)?)?);
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        let out = self.output.forward(&Tensor::concat(&refs, 2)?)?;
        match b {
            Some(_) => Ok(out),
            None => out.reshape(&[t, d_model]),
        }
    }
}

impl Module for MultiHeadAttention {
    fn parameters(&self) -> Vec<&Parameter> {
        [&self.query, &self.key, &self.value, &self.output]
            .into_iter()
            .flat_map(|l| l.parameters())
            .collect()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output,
        ]
        .into_iter()
        .flat_map(|l| l.parameters_mut())
        .collect()
    }
}

/// Adaptive instance normalization with a learned style map: each content
/// row `[B, F]` is standardized, then scaled and shifted by affine
/// projections of the matching style row `[B, S]`.
#[derive(Debug, Clone)]
pub struct AdaIn {
    scale: Linear,
    shift: Linear,
}

impl AdaIn {
    pub fn new(
        name: &str,
        style_dim: usize,
        content_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            scale: Linear::new(&format!("{name}.scale"), style_dim, content_dim, rng)?,
            shift: Linear::new(&format!("{name}.shift"), style_dim, content_dim, rng)?,
        })
    }

    pub fn forward(&self, content: &Tensor, style: &Tensor) -> Result<Tensor> {
        let f = self.scale.fan_out();
        match (content.shape(), style.shape()) {
            (&[b, cf], &[bs, _]) if cf == f && b == bs => {}
            (c, s) => return Err(mismatch("adain", &[c, s])),
        }
        self.forward_standardized(&content.standardize(f, NORM_EPS)?, style)
    }

    /// [`AdaIn::forward`] for content that is already standardized.
    pub fn forward_standardized(&self, normed: &Tensor, style: &Tensor) -> Result<Tensor> {
        self.scale
            .forward(style)?
            .mul(normed)?
            .add(&self.shift.forward(style)?)
    }
}

impl Module for AdaIn {
    fn parameters(&self) -> Vec<&Parameter> {
        [&self.scale, &self.shift]
            .into_iter()
            .flat_map(|l| l.parameters())
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        [&mut self.scale, &mut self.shift]
            .into_iter()
            .flat_map(|l| l.parameters_mut())
            .collect()
    }
}
