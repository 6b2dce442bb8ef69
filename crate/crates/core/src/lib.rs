//! Lightweight patch-level change detection.
//!
//! A Siamese residual encoder with multi-layer feature compression scores
//! bi-temporal patch pairs as changed or unchanged. The crate covers the
//! network, its L1-norm structured pruning guided by per-stage sensitivity,
//! weighted cross-entropy training, the evaluation metrics, a synthetic
//! dataset generator and a two-stage pipeline that uses the patch classifier
//! to filter tiles of a large scene before pixel-level detection.

pub mod dataset;
mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pruning;
pub mod train;

pub use error::{Error, Result};
pub use lpcd_tensor as tensor;
