//! Weighted cross-entropy, confusion-matrix metrics and divergences between
//! class-conditional probability distributions.

mod confusion;
mod divergence;
mod loss;

pub use confusion::{metrics, ConfusionCounts, MetricsReport};
pub use divergence::{bin_index, jsd, kld, probability_histograms, DEFAULT_BINS, DEFAULT_EPSILON};
pub use loss::{class_weights, wce_loss, ClassWeights};
