use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::nn::Parameter;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub(crate) step: u64,
    /// First and second moment per parameter name.
    pub(crate) moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(1e-4, 0.01)
    }
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter. Each must hold a
    /// gradient from the preceding backward pass.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter>) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().filter(|p| p.trainable()).collect();
        let grads = params
            .iter()
            .map(|p| {
                p.grad()
                    .ok_or_else(|| TensorError::MissingGradient(p.name().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (p, g) in params.into_iter().zip(grads) {
            let n = g.len();
            let (m, v) = self
                .moments
                .entry(p.name().to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let mut values = p.values().to_vec();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                values[i] -= self.lr * (update + self.weight_decay * values[i]);
            }
            p.set_values(values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn grad_of(p: &Parameter, f: impl Fn(&Tensor) -> Tensor) {
        p.zero_grad();
        f(&p.var()).backward().unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Parameter::new("p", vec![1.5, -2.0], &[2]).unwrap();
        let mut opt = AdamW::new(0.1, 0.0);
        grad_of(&p, |x| x.sum().unwrap().scale(0.0).unwrap());
        opt.step([&mut p]).unwrap();
        assert_eq!(p.values(), &[1.5, -2.0]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Parameter::new("w", vec![1.0], &[1]).unwrap();
        let mut opt = AdamW::default();
        assert_eq!(
            opt.step([&mut p]).unwrap_err(),
            TensorError::MissingGradient("w".into())
        );
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = Parameter::new("p", vec![1.0; 3], &[3]).unwrap();
        let mut opt = AdamW::new(0.01, 0.0);
        for _ in 0..500 {
            grad_of(&p, |x| x.square().unwrap().sum().unwrap());
            opt.step([&mut p]).unwrap();
        }
        let norm = p.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "norm {norm}");
    }

    #[test]
    fn buffers_are_skipped() {
        let mut b = Parameter::buffer("b", vec![3.0], &[1]).unwrap();
        let mut opt = AdamW::default();
        opt.step([&mut b]).unwrap();
        assert_eq!(b.values(), &[3.0]);
    }
}
