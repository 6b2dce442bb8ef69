//! L1-norm structured channel pruning and the sensitivity-guided search.

mod algorithm;
mod sensitivity;
mod surgery;

pub use algorithm::{run_sensitivity_pruning, PruningConfig, PruningOutcome};
pub use sensitivity::{rectify_ratios, sensitivity, SensitivityProfile, StageSensitivity};
pub use surgery::{l1_filter_scores, prune_stage, pruned_count, retained, tally_parameters, PruneMask};
