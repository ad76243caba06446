//! Evaluation runs: one scheduler over every seed on a calibrated workload.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mcds_core::{
    GreedyScheduler, IntervalMetrics, RandomScheduler, Scheduler, SchedulingDecision, Simulator,
};
use mcds_mcts::{MctsScheduler, Mode};
use mcds_surrogate::{ReplayBuffer, Surrogate};
use mcds_tensor::optim::AdamW;

use crate::config::{ExperimentConfig, SchedulerKind};
use crate::error::{io, unwritable, Error, Result};
use crate::record::{seed_metrics, write_interval_csv, write_timing_csv, RunSummary};

pub const MODEL_FILE: &str = "model.ckpt";
pub const BUFFER_FILE: &str = "buffer.jsonl";

/// Everything one seed's run produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<IntervalMetrics>,
    /// Wall-clock seconds in `decide` plus `observe`, per interval.
    pub scheduling_times: Vec<f64>,
    pub decisions: Vec<SchedulingDecision>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub summary: RunSummary,
    pub runs: Vec<SeedRun>,
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

/// Model file for `seed`: a file given directly, else the seed's own
/// training output, else a shared `model.ckpt` in the directory.
pub fn model_path(checkpoint: &Path, seed: u64) -> PathBuf {
    if checkpoint.is_file() {
        return checkpoint.to_path_buf();
    }
    let own = seed_dir(checkpoint, seed).join(MODEL_FILE);
    if own.is_file() {
        own
    } else {
        checkpoint.join(MODEL_FILE)
    }
}

/// Trained surrogate, its optimizer and the replay buffer saved next to it.
pub fn load_trained(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Surrogate, AdamW, ReplayBuffer)> {
    let checkpoint = config.checkpoint.as_deref().ok_or_else(|| {
        Error::ConfigInvalid(format!(
            "scheduler {} needs a trained checkpoint",
            config.scheduler
        ))
    })?;
    let path = model_path(checkpoint, seed);
    let (model, optimizer) = Surrogate::load(config.surrogate_config(seed), &path)
        .map_err(|e| Error::from_checkpoint(&path, e))?;
    let optimizer =
        optimizer.unwrap_or_else(|| AdamW::new(config.optimizer.lr, config.optimizer.weight_decay));
    let buffer_path = path.with_file_name(BUFFER_FILE);
    let buffer = if buffer_path.is_file() {
        ReplayBuffer::load(&buffer_path, config.search.replay_capacity)?
    } else {
        ReplayBuffer::new(config.search.replay_capacity)
    };
    Ok((model, optimizer, buffer))
}

pub fn build_scheduler(config: &ExperimentConfig, seed: u64) -> Result<Box<dyn Scheduler>> {
    Ok(match config.scheduler {
        SchedulerKind::Random => Box::new(RandomScheduler::new(seed)),
        SchedulerKind::Greedy => Box::new(GreedyScheduler),
        SchedulerKind::Mcds | SchedulerKind::GobiOnly => {
            let (model, optimizer, buffer) = load_trained(config, seed)?;
            Box::new(MctsScheduler::new(
                config.search.clone(),
                config.effective_ablations(),
                Mode::Test,
                model,
                optimizer,
                buffer,
                seed,
            )?)
        }
    })
}

/// Every application needs a deadline before SLA rates mean anything.
pub fn check_calibrated(config: &ExperimentConfig) -> Result<()> {
    for app in config.sim.app_labels() {
        if !config.sim.deadlines.contains_key(app) {
            return Err(Error::ConfigInvalid(format!(
                "no deadline for application {app}; calibrate first"
            )));
        }
    }
    Ok(())
}

/// Runs `scheduler` for `n_intervals` on the seed's workload. Scheduling
/// time covers `decide` and `observe` only, not the real environment's step.
pub fn drive(
    scheduler: &mut dyn Scheduler,
    sim: &mut Simulator,
    n_intervals: usize,
) -> Result<(Vec<IntervalMetrics>, Vec<f64>, Vec<SchedulingDecision>)> {
    let mut metrics = Vec::with_capacity(n_intervals);
    let mut times = Vec::with_capacity(n_intervals);
    let mut decisions = Vec::with_capacity(n_intervals);
    for _ in 0..n_intervals {
        let start = Instant::now();
        let d = scheduler.decide(sim)?;
        let mut elapsed = start.elapsed();
        let out = sim.step(&d)?;
        let start = Instant::now();
        scheduler.observe(&out.metrics);
        elapsed += start.elapsed();
        times.push(elapsed.as_secs_f64());
        metrics.push(out.metrics);
        decisions.push(d);
    }
    Ok((metrics, times, decisions))
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    check_calibrated(config)?;
    let mut scheduler = build_scheduler(config, seed)?;
    let mut sim = Simulator::new(config.sim_for_seed(seed))?;
    let (metrics, scheduling_times, decisions) =
        drive(scheduler.as_mut(), &mut sim, config.n_intervals)?;
    Ok(SeedRun {
        seed,
        metrics,
        scheduling_times,
        decisions,
    })
}

/// Runs every seed without writing anything.
pub fn evaluate(config: &ExperimentConfig) -> Result<Evaluation> {
    config.validate()?;
    let runs = config
        .seeds
        .iter()
        .map(|&s| run_seed(config, s))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| seed_metrics(&r.metrics, &r.scheduling_times))
        .collect();
    let summary = RunSummary::from_seeds(
        config.label(),
        config.scheduler.name().to_string(),
        config.effective_ablations().label(),
        config.search.psi,
        config.seeds.clone(),
        &rows,
    );
    Ok(Evaluation { summary, runs })
}

/// Evaluates and writes, under `output_dir/<label>/`, each seed's
/// `intervals.csv`, `timing.csv` and `decisions.jsonl`, plus
/// `summary.json`.
pub fn run_eval(config: &ExperimentConfig) -> Result<Evaluation> {
    let eval = evaluate(config)?;
    let root = config.output_dir.join(config.label());
    let apps = config.sim.app_labels();
    for run in &eval.runs {
        let dir = seed_dir(&root, run.seed);
        std::fs::create_dir_all(&dir).map_err(unwritable(&dir))?;
        write_interval_csv(&dir.join("intervals.csv"), &apps, &run.metrics)?;
        write_timing_csv(&dir.join("timing.csv"), 0, &run.scheduling_times)?;
        write_decisions(&dir.join("decisions.jsonl"), &run.decisions)?;
    }
    write_json(&root.join("summary.json"), &eval.summary)?;
    Ok(eval)
}

pub fn write_decisions(path: &Path, decisions: &[SchedulingDecision]) -> Result<()> {
    let mut out = Vec::new();
    for d in decisions {
        serde_json::to_writer(&mut out, d).expect("decisions serialize");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(unwritable(path))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(unwritable(dir))?;
    }
    let mut f = std::fs::File::create(path).map_err(unwritable(path))?;
    serde_json::to_writer_pretty(&mut f, value).expect("summaries serialize");
    f.write_all(b"\n").map_err(io(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
