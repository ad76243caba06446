use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mcds_core::SimConfig;
use mcds_mcts::{Ablations, SearchConfig};
use mcds_surrogate::{FitConfig, SurrogateConfig};
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Mcds,
    Random,
    Greedy,
    GobiOnly,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [Self::Mcds, Self::Random, Self::Greedy, Self::GobiOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mcds => "mcds",
            Self::Random => "random",
            Self::Greedy => "greedy",
            Self::GobiOnly => "gobi_only",
        }
    }

    /// Whether the scheduler needs a trained surrogate.
    pub fn needs_model(self) -> bool {
        matches!(self, Self::Mcds | Self::GobiOnly)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown scheduler {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub n_intervals: usize,
    pub checkpoint_every: usize,
    /// Training workloads use `seed + seed_offset` so they never coincide
    /// with an evaluation workload.
    pub seed_offset: u64,
    /// Offline pass over the collected buffer after the online run.
    pub fit: Option<FitConfig>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n_intervals: 200,
            checkpoint_every: 25,
            seed_offset: 1000,
            fit: Some(FitConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub n_intervals: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_intervals: 3000,
            seed: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub surrogate: SurrogateConfig,
    pub search: SearchConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub calibration: CalibrationConfig,
    pub scheduler: SchedulerKind,
    pub ablations: Ablations,
    pub n_intervals: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Training output directory (or a single model file) for schedulers
    /// that need a surrogate.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            surrogate: SurrogateConfig::default(),
            search: SearchConfig::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            calibration: CalibrationConfig::default(),
            scheduler: SchedulerKind::Mcds,
            ablations: Ablations::default(),
            n_intervals: 200,
            seeds: (0..5).collect(),
            output_dir: PathBuf::from("out"),
            checkpoint: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        let config: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(io(path))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.n_intervals == 0 {
            return bad("n_intervals must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.ablations.any() && self.scheduler != SchedulerKind::Mcds {
            return bad("ablation flags only apply to scheduler mcds");
        }
        if self.training.n_intervals == 0 || self.training.checkpoint_every == 0 {
            return bad("training needs at least one interval and a positive checkpoint period");
        }
        self.sim.validate()?;
        self.search.validate()?;
        self.surrogate_config(0).validate()?;
        Ok(())
    }

    /// The effective ablations: `gobi_only` is MCDS without the tree.
    pub fn effective_ablations(&self) -> Ablations {
        match self.scheduler {
            SchedulerKind::GobiOnly => Ablations {
                no_mcts: true,
                ..self.ablations
            },
            _ => self.ablations,
        }
    }

    /// Surrogate sized for the simulated system, seeded per run.
    pub fn surrogate_config(&self, seed: u64) -> SurrogateConfig {
        SurrogateConfig {
            n_hosts: self.sim.n_hosts(),
            window: self.sim.window,
            seed,
            ..self.surrogate.clone()
        }
    }

    pub fn sim_for_seed(&self, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            ..self.sim.clone()
        }
    }

    /// Short name of the configuration, used for output directories.
    pub fn label(&self) -> String {
        let mut label = self.scheduler.name().to_string();
        if self.ablations.any() {
            label.push('-');
            label.push_str(&self.ablations.label().replace(',', "-"));
        }
        if self.scheduler == SchedulerKind::Mcds && self.search.psi != SearchConfig::default().psi {
            label.push_str(&format!("-psi{}", self.search.psi));
        }
        label
    }
}
