//! Minimal dense-tensor math for small convolutional networks.
//!
//! All values are `f64`. Operations are recorded on a [`Tape`] and
//! differentiated in reverse; the convolution and linear layers share one
//! packed matrix multiply whose per-element reduction order matches a naive
//! loop, so results are reproducible bit for bit.

mod error;
pub mod gemm;
pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::sgd_momentum_step;
pub use tape::{BatchNormMode, BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;
