use rayon::prelude::*;

use super::sensitivity::SensitivityProfile;
use super::surgery::prune_stage;
use crate::dataset::PatchPair;
use crate::error::{Error, Result};
use crate::model::{HeadKind, LpcdNet, NetworkConfig};
use crate::train::{evaluate, train, TrainConfig, DEFAULT_THRESHOLD};

#[derive(Clone, Debug, PartialEq)]
pub struct PruningConfig {
    /// Initial pruning ratio.
    pub lambda: f64,
    pub alpha: f64,
    /// Use `0.5 - s` so that sensitive stages are pruned less.
    pub invert: bool,
    pub retrain_epochs: usize,
}

impl Default for PruningConfig {
    fn default() -> Self {
        PruningConfig {
            lambda: 0.125,
            alpha: 4.0,
            invert: false,
            retrain_epochs: 3,
        }
    }
}

pub struct PruningOutcome {
    pub profile: SensitivityProfile,
    /// Compressed network configuration with the multi-layer head.
    pub config: NetworkConfig,
    /// The compressed network trained from scratch.
    pub model: LpcdNet,
    pub baseline: LpcdNet,
}

fn val_patch_acc(net: &LpcdNet, val: &[PatchPair], beta: f64) -> Result<f64> {
    Ok(evaluate(net, val, beta, DEFAULT_THRESHOLD)?.patch_acc.unwrap_or(0.0))
}

/// Sensitivity-guided pruning:
///
/// 1. train the baseline whose head reads the deepest stage only;
/// 2. prune each stage alone by `lambda` using the L1 criterion;
/// 3. fine-tune each pruned copy and record its validation PatchAcc drop `l_i`;
/// 4. map the drops to sensitivities;
/// 5. rescale the ratio per stage;
/// 6. derive the new channel counts;
/// 7. build the compressed network with the multi-layer head and train it from scratch.
///
/// `train_cfg` drives steps 1 and 7; the fine-tunes of step 3 reuse it with
/// `retrain_epochs`. Steps 2-3 run in parallel over independent copies.
pub fn run_sensitivity_pruning(
    base: &NetworkConfig,
    train_set: &[PatchPair],
    val_set: &[PatchPair],
    cfg: &PruningConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<PruningOutcome> {
    if !(cfg.lambda > 0.0 && cfg.lambda < 1.0) {
        return Err(Error::InvalidArgument(format!("initial ratio {} outside (0, 1)", cfg.lambda)));
    }
    if cfg.retrain_epochs == 0 {
        return Err(Error::InvalidArgument("retrain_epochs must be positive".into()));
    }
    let mut baseline_cfg = base.clone();
    baseline_cfg.head = HeadKind::LastStage;
    let baseline = train(LpcdNet::build(&baseline_cfg, seed)?, train_set, val_set, &TrainConfig { seed, ..train_cfg.clone() })?.model;
    let base_acc = val_patch_acc(&baseline, val_set, train_cfg.beta)?;

    let retrain_cfg = TrainConfig {
        epochs: cfg.retrain_epochs,
        allow_uneven_schedule: true,
        ..train_cfg.clone()
    };
    let losses: Vec<f64> = (1..=4usize)
        .into_par_iter()
        .map(|stage| -> Result<f64> {
            let (pruned, _) = prune_stage(&baseline, stage, cfg.lambda)?;
            let step_cfg = TrainConfig {
                seed: seed.wrapping_add(stage as u64),
                ..retrain_cfg.clone()
            };
            let tuned = train(pruned, train_set, val_set, &step_cfg)?.model;
            Ok(base_acc - val_patch_acc(&tuned, val_set, train_cfg.beta)?)
        })
        .collect::<Result<_>>()?;

    let losses: [f64; 4] = losses.try_into().expect("four stages");
    let profile = SensitivityProfile::from_losses(losses, base.channels(), cfg.lambda, cfg.alpha, cfg.invert, base_acc)?;

    let mut config = base.clone();
    config.head = HeadKind::Mlfc;
    config.set_channels(profile.new_channels());
    let final_seed = seed.wrapping_add(100);
    let model = train(LpcdNet::build(&config, final_seed)?, train_set, val_set, &TrainConfig { seed: final_seed, ..train_cfg.clone() })?.model;
    Ok(PruningOutcome {
        profile,
        config,
        model,
        baseline,
    })
}
