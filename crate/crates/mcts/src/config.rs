use mcds_surrogate::GobiConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Iterations per interval.
    pub psi: usize,
    /// Rollout horizon of random-policy simulation.
    pub phi: usize,
    /// Exploration weight.
    pub c1: f64,
    /// Bonus for the child GOBI proposed, test mode only.
    pub c2: f64,
    /// Candidates per expansion.
    pub k_exp: usize,
    pub gobi: GobiConfig,
    /// Replay samples per fine-tuning step.
    pub batch_size: usize,
    pub fine_tune: bool,
    /// Nodes kept after re-rooting; a larger retained subtree is cut back to
    /// the new root and its children.
    pub node_budget: usize,
    pub replay_capacity: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            psi: 50,
            phi: 10,
            c1: 0.1,
            c2: 0.5,
            k_exp: 20,
            gobi: GobiConfig::default(),
            batch_size: 32,
            fine_tune: true,
            node_budget: 10_000,
            replay_capacity: 2000,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        for (name, v) in [("c1", self.c1), ("c2", self.c2)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("psi", self.psi),
            ("phi", self.phi),
            ("k_exp", self.k_exp),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.gobi.step_size <= 0.0 {
            return bad(format!(
                "GOBI step size {} must be positive",
                self.gobi.step_size
            ));
        }
        Ok(())
    }
}

/// The four ablation axes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Schedule with GOBI alone, no tree.
    pub no_mcts: bool,
    /// Value leaves with random-policy rollouts instead of the surrogate.
    pub no_dsm: bool,
    /// `c1 = 0`.
    pub no_exploration: bool,
    /// `c2 = 0`.
    pub no_domain_knowledge: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 4] =
        ["no_mcts", "no_dsm", "no_exploration", "no_domain_knowledge"];

    /// Parses a comma-separated flag list.
    pub fn parse(list: &str) -> Result<Self> {
        let mut a = Self::default();
        for flag in list.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            match flag {
                "no_mcts" => a.no_mcts = true,
                "no_dsm" => a.no_dsm = true,
                "no_exploration" => a.no_exploration = true,
                "no_domain_knowledge" => a.no_domain_knowledge = true,
                other => return Err(Error::ConfigInvalid(format!("unknown ablation {other:?}"))),
            }
        }
        Ok(a)
    }

    pub fn any(&self) -> bool {
        self.no_mcts || self.no_dsm || self.no_exploration || self.no_domain_knowledge
    }

    /// Comma-separated names of the set flags, empty when none are.
    pub fn label(&self) -> String {
        let set = [
            self.no_mcts,
            self.no_dsm,
            self.no_exploration,
            self.no_domain_knowledge,
        ];
        Self::NAMES
            .iter()
            .zip(set)
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn c1(&self, c1: f64) -> f64 {
        if self.no_exploration {
            0.0
        } else {
            c1
        }
    }

    pub fn c2(&self, c2: f64) -> f64 {
        if self.no_domain_knowledge {
            0.0
        } else {
            c2
        }
    }
}
