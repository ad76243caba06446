//! Reverse-mode automatic differentiation over dense `f64` tensors, the
//! layers built on it, an AdamW optimizer and a checkpoint format.

pub mod checkpoint;
mod error;
pub mod nn;
mod ops;
pub mod optim;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::MASK_VALUE;
pub use tensor::{
    grad_wrt_input, is_grad_enabled, no_grad, params_frozen, with_frozen_params, Tensor,
};
