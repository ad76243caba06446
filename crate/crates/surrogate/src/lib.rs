//! Learned model of the interval objective `f(G, W, S)`, its replay buffer
//! and training loop, and gradient-based decision search over it.

pub mod buffer;
mod error;
pub mod gobi;
pub mod model;
pub mod train;

pub use buffer::ReplayBuffer;
pub use error::{Error, Result};
pub use gobi::{gobi, gobi_graph, DecisionObjective, GobiConfig, GobiResult, SurrogateObjective};
pub use model::{Surrogate, SurrogateConfig};
pub use train::{fit, train_step, FitConfig, FitReport};
