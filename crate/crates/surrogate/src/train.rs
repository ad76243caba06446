//! Gradient steps and early-stopped fitting.

use mcds_core::SystemState;
use mcds_tensor::checkpoint::Checkpoint;
use mcds_tensor::nn::Module;
use mcds_tensor::optim::AdamW;
use mcds_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Surrogate;

/// One AdamW step on the mean squared error over `batch`. Returns the loss
/// before the step.
pub fn train_step(
    model: &mut Surrogate,
    optimizer: &mut AdamW,
    batch: &[(&SystemState, f64)],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&(_, t)) = batch.iter().find(|(_, t)| !(0.0..=1.0).contains(t)) {
        return Err(Error::TargetOutOfRange(t));
    }
    model.zero_grad();
    let states: Vec<&SystemState> = batch.iter().map(|(s, _)| *s).collect();
    let targets = Tensor::new(batch.iter().map(|(_, t)| *t).collect(), &[batch.len(), 1])?;
    let loss = model.forward_train(&states)?.mse_loss(&targets)?;
    loss.backward()?;
    optimizer.step(model.parameters_mut())?;
    Ok(loss.item())
}

/// Eval-mode mean squared error.
pub fn evaluate(model: &Surrogate, data: &[(&SystemState, f64)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let states: Vec<&SystemState> = data.iter().map(|(s, _)| *s).collect();
    let pred = model.predict(&states)?;
    Ok(pred
        .iter()
        .zip(data)
        .map(|(p, (_, t))| (p - t).powi(2))
        .sum::<f64>()
        / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 32,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch whose weights the model ends up with.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Shuffles `data` into train/validation parts and runs epochs of
/// minibatch steps until validation loss stalls for `patience` epochs, then
/// restores the best weights. With fewer than two samples everything is
/// used for training and no validation happens.
pub fn fit(
    model: &mut Surrogate,
    optimizer: &mut AdamW,
    data: &[(&SystemState, f64)],
    config: &FitConfig,
) -> Result<FitReport> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if data.len() < 2 {
        0
    } else {
        ((data.len() as f64 * config.validation_fraction).round() as usize).clamp(1, data.len() - 1)
    };
    let val: Vec<(&SystemState, f64)> = order[..n_val].iter().map(|&i| data[i]).collect();
    let mut train: Vec<(&SystemState, f64)> = order[n_val..].iter().map(|&i| data[i]).collect();
    let batch_size = config.batch_size.max(1);

    let mut report = FitReport {
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, Checkpoint)> = None;
    for epoch in 0..config.max_epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train.chunks(batch_size) {
            total += train_step(model, optimizer, chunk)? * chunk.len() as f64;
        }
        report.train_loss.push(total / train.len() as f64);
        if val.is_empty() {
            report.best_epoch = epoch;
            continue;
        }
        let v = evaluate(model, &val)?;
        report.validation_loss.push(v);
        match &best {
            Some((b, _)) if v >= *b => {
                if epoch - report.best_epoch >= config.patience {
                    report.stopped_early = true;
                    break;
                }
            }
            _ => {
                best = Some((v, Checkpoint::capture(model, None)));
                report.best_epoch = epoch;
            }
        }
    }
    if let Some((_, ckpt)) = best {
        ckpt.restore(model)?;
    }
    Ok(report)
}
