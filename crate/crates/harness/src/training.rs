//! Online training campaigns with periodic, resumable checkpoints.
//!
//! Layout under `output_dir/seed-<s>/`: `online/` holds the latest
//! checkpoint (model with optimizer state, replay buffer, simulator and
//! search RNG); `model.ckpt` and `buffer.jsonl` are the final artefacts
//! evaluation loads; `train.csv` and `losses.csv` log the run.

use std::path::{Path, PathBuf};

use mcds_core::{IntervalMetrics, Scheduler, Simulator, SystemState};
use mcds_mcts::{Ablations, MctsScheduler, Mode};
use mcds_surrogate::{fit, FitReport, ReplayBuffer, Surrogate};
use mcds_tensor::optim::AdamW;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{unwritable, Error, Result};
use crate::eval::{read_json, seed_dir, write_json, BUFFER_FILE, MODEL_FILE};
use crate::record::{create_csv, write_interval_csv};

const STATE_FILE: &str = "state.json";

/// Everything besides the model and buffer needed to continue a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    seed: u64,
    sim: Simulator,
    rng: ChaCha8Rng,
    metrics: Vec<IntervalMetrics>,
    losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<IntervalMetrics>,
    /// Fine-tuning loss of every interval.
    pub losses: Vec<f64>,
    pub fit: Option<FitReport>,
}

/// Trains one surrogate per seed.
pub fn run_training(config: &ExperimentConfig, resume: bool) -> Result<Vec<TrainingRun>> {
    config.validate()?;
    config
        .seeds
        .iter()
        .map(|&s| train_seed(config, s, resume))
        .collect()
}

pub fn train_seed(config: &ExperimentConfig, seed: u64, resume: bool) -> Result<TrainingRun> {
    let dir = seed_dir(&config.output_dir, seed);
    let online = dir.join("online");
    std::fs::create_dir_all(&online).map_err(unwritable(&online))?;
    let fresh_optimizer = || AdamW::new(config.optimizer.lr, config.optimizer.weight_decay);

    let (model, optimizer, buffer, state) = if resume && online.join(STATE_FILE).is_file() {
        let state: TrainState = read_json(&online.join(STATE_FILE))?;
        if state.seed != seed {
            return Err(Error::CheckpointIncompatible {
                path: online.clone(),
                reason: format!("saved for seed {}, not {seed}", state.seed),
            });
        }
        let path = online.join(MODEL_FILE);
        let (model, opt) = Surrogate::load(config.surrogate_config(seed), &path)
            .map_err(|e| Error::from_checkpoint(&path, e))?;
        let buffer = ReplayBuffer::load(&online.join(BUFFER_FILE), config.search.replay_capacity)?;
        (
            model,
            opt.unwrap_or_else(fresh_optimizer),
            buffer,
            Some(state),
        )
    } else {
        let model = Surrogate::new(config.surrogate_config(seed))?;
        (
            model,
            fresh_optimizer(),
            ReplayBuffer::new(config.search.replay_capacity),
            None,
        )
    };

    let mut scheduler = MctsScheduler::new(
        config.search.clone(),
        Ablations::default(),
        Mode::Train,
        model,
        optimizer,
        buffer,
        seed,
    )?;
    let (mut sim, mut metrics, mut losses) = match state {
        Some(s) => {
            scheduler.set_rng(s.rng);
            (s.sim, s.metrics, s.losses)
        }
        None => {
            let sim_config = config.sim_for_seed(seed + config.training.seed_offset);
            (Simulator::new(sim_config)?, Vec::new(), Vec::new())
        }
    };

    let n = config.training.n_intervals;
    while metrics.len() < n {
        let d = scheduler.decide(&sim)?;
        let out = sim.step(&d)?;
        let seen = scheduler.losses().len();
        scheduler.observe(&out.metrics);
        if let Some(&loss) = scheduler.losses().get(seen) {
            losses.push(loss);
        }
        metrics.push(out.metrics);
        let done = metrics.len();
        if done % config.training.checkpoint_every == 0 || done == n {
            // the tree is not checkpointed, so a resumed run and an
            // uninterrupted one must both start afresh here
            scheduler.reset_tree();
            let state = TrainState {
                seed,
                sim: sim.clone(),
                rng: scheduler.rng().clone(),
                metrics,
                losses,
            };
            save_online(&online, &scheduler, &state)?;
            write_logs(&dir, config, &state.metrics, &state.losses)?;
            (metrics, losses) = (state.metrics, state.losses);
        }
    }
    // surface an error deferred from the last `observe`
    if let Some(e) = scheduler.take_deferred() {
        return Err(e.into());
    }

    let (mut model, mut optimizer, buffer) = scheduler.into_parts();
    let fit_report = match &config.training.fit {
        Some(fc) if !buffer.is_empty() => {
            let data: Vec<(&SystemState, f64)> =
                buffer.iter().map(|s| (&s.state, s.target)).collect();
            let report = fit(&mut model, &mut optimizer, &data, fc)?;
            write_json(&dir.join("fit.json"), &report)?;
            Some(report)
        }
        _ => None,
    };
    model.save(&dir.join(MODEL_FILE), Some(&optimizer))?;
    buffer.save(&dir.join(BUFFER_FILE))?;
    Ok(TrainingRun {
        seed,
        dir,
        metrics,
        losses,
        fit: fit_report,
    })
}

fn save_online(online: &Path, scheduler: &MctsScheduler, state: &TrainState) -> Result<()> {
    scheduler
        .model()
        .save(&online.join(MODEL_FILE), Some(scheduler.optimizer()))?;
    scheduler.buffer().save(&online.join(BUFFER_FILE))?;
    write_json(&online.join(STATE_FILE), state)
}

fn write_logs(
    dir: &Path,
    config: &ExperimentConfig,
    metrics: &[IntervalMetrics],
    losses: &[f64],
) -> Result<()> {
    write_interval_csv(&dir.join("train.csv"), &config.sim.app_labels(), metrics)?;
    let path = dir.join("losses.csv");
    let mut w = create_csv(&path)?;
    w.write_record(["interval", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().map_err(unwritable(&path))?;
    Ok(())
}
