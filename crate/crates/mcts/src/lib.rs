//! Monte-Carlo tree search over scheduling decisions, trained against
//! simulator rollouts and run against a learned surrogate.

mod config;
mod error;
pub mod search;
pub mod tree;

pub use config::{Ablations, SearchConfig};
pub use error::{Error, Result};
pub use search::{MctsScheduler, Mode, SearchRecord, StepCounts};
pub use tree::{backed_up_value, exploration_bonus, Chosen, Node, Tree};
