//! Training loop, evaluation and the registration-error sweep.

use std::collections::BTreeMap;

use lpcd_tensor::{sgd_momentum_step, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{apply_registration_error, batch, PatchPair};
use crate::error::{Error, Result};
use crate::metrics::{
    class_weights, jsd, kld, metrics, probability_histograms, wce_loss, ClassWeights, ConfusionCounts, MetricsReport,
    DEFAULT_BINS, DEFAULT_EPSILON,
};
use crate::model::{bind, predict, Classifier, Mode};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightSpec {
    /// Derived from the class balance of the training set.
    Auto,
    Fixed(ClassWeights),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub weights: WeightSpec,
    pub seed: u64,
    /// Permits an epoch count that is not a multiple of 3.
    pub allow_uneven_schedule: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 90,
            lr0: 1e-4,
            momentum: 0.99,
            batch_size: 16,
            beta: 6.0,
            weights: WeightSpec::Auto,
            seed: 0,
            allow_uneven_schedule: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if self.epochs % 3 != 0 && !self.allow_uneven_schedule {
            return fail(format!(
                "epochs = {} is not a multiple of 3; the learning rate drops at each third (set allow_uneven_schedule to override)",
                self.epochs
            ));
        }
        if !(self.lr0 > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("need lr0 > 0 and 0 <= momentum < 1, got {} and {}", self.lr0, self.momentum));
        }
        if !(self.beta > 0.0) {
            return fail(format!("beta must be positive, got {}", self.beta));
        }
        Ok(())
    }
}

/// Learning-rate factor for 0-based `epoch`: 1, 0.1, 0.01 over the three thirds.
pub fn lr_multiplier(epoch: usize, epochs: usize) -> f64 {
    let third = (3 * epoch / epochs.max(1)).min(2);
    [1.0, 0.1, 0.01][third]
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_patch_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<C> {
    /// Model state after the epoch with the highest validation PatchAcc.
    pub model: C,
    pub best_epoch: usize,
    pub best_val_patch_acc: Option<f64>,
    pub weights: ClassWeights,
    pub history: Vec<EpochRecord>,
}

pub fn resolve_weights(spec: WeightSpec, train: &[PatchPair]) -> Result<ClassWeights> {
    match spec {
        WeightSpec::Fixed(w) => Ok(w),
        WeightSpec::Auto => {
            let changed = train.iter().filter(|p| p.label == 1).count();
            class_weights(changed, train.len())
        }
    }
}

fn better(candidate: Option<f64>, best: Option<f64>) -> bool {
    match (candidate, best) {
        (Some(c), Some(b)) => c > b,
        (Some(_), None) => true,
        _ => false,
    }
}

/// SGD with momentum over the weighted cross-entropy. The learning rate is
/// divided by 10 at each third of the epochs; after every epoch the model is
/// scored by validation PatchAcc and the best (earliest on ties) is kept.
pub fn train<C: Classifier>(mut model: C, train_set: &[PatchPair], val_set: &[PatchPair], cfg: &TrainConfig) -> Result<TrainOutcome<C>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    let weights = resolve_weights(cfg.weights, train_set)?;
    let mut velocity: BTreeMap<String, Tensor> =
        model.params().iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec()))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<f64>, C)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr0 * lr_multiplier(epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<&PatchPair> = idx.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
            let (a, b) = batch(&pairs)?;
            let mut tape = Tape::new();
            let vars = bind(&mut tape, model.params(), true);
            let pass = model.forward(&mut tape, &vars, &a, &b, Mode::Train)?;
            let loss = wce_loss(&mut tape, pass.logits, &labels, weights)?;
            let value = tape.value(loss).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi, loss: value });
            }
            let grads = tape.backward(loss)?;
            for (name, param) in model.params_mut().iter_mut() {
                let g = grads.get(vars[name]).expect("parameter leaf has a gradient");
                sgd_momentum_step(param, g, velocity.get_mut(name).expect("velocity"), lr, cfg.momentum)?;
            }
            model.absorb_stats(&pass.stats);
            loss_sum += value;
            batches += 1;
        }
        let probs = predict_all(&model, val_set)?;
        let counts = tally(&probs, val_set, DEFAULT_THRESHOLD);
        let val_patch_acc = metrics(counts, cfg.beta)?.patch_acc;
        history.push(EpochRecord {
            epoch,
            lr,
            mean_loss: loss_sum / batches as f64,
            val_patch_acc,
        });
        if best.is_none() || better(val_patch_acc, best.as_ref().and_then(|b| b.1)) {
            best = Some((epoch, val_patch_acc, model.clone()));
        }
    }
    let (best_epoch, best_val_patch_acc, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_patch_acc,
        weights,
        history,
    })
}

/// Change probabilities for every pair, evaluated in fixed-size chunks.
pub fn predict_all<C: Classifier>(model: &C, set: &[PatchPair]) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = set
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let refs: Vec<&PatchPair> = chunk.iter().collect();
            let (a, b) = batch(&refs)?;
            predict(model, &a, &b)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// A pair is predicted changed when its probability exceeds `threshold`.
pub fn tally(probs: &[f64], set: &[PatchPair], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (p, pair) in probs.iter().zip(set) {
        c.add(*p > threshold, pair.label == 1);
    }
    c
}

/// Full metric report, including divergences between the probability
/// histograms of changed and unchanged pairs when both classes are present.
pub fn report_from_probs(probs: &[f64], set: &[PatchPair], beta: f64, threshold: f64) -> Result<MetricsReport> {
    let mut report = metrics(tally(probs, set, threshold), beta)?;
    let labels: Vec<u8> = set.iter().map(|p| p.label).collect();
    if labels.contains(&0) && labels.contains(&1) {
        let (p, q) = probability_histograms(probs, &labels, DEFAULT_BINS, DEFAULT_EPSILON)?;
        report.kld = Some(kld(&p, &q)?);
        report.jsd = Some(jsd(&p, &q)?);
    }
    Ok(report)
}

pub fn evaluate<C: Classifier>(model: &C, set: &[PatchPair], beta: f64, threshold: f64) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    report_from_probs(&predict_all(model, set)?, set, beta, threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    pub e: usize,
    pub recall_neg: Option<f64>,
    pub recall_pos: Option<f64>,
    pub patch_acc: Option<f64>,
    /// `(PatchAcc(0) - PatchAcc(E)) / PatchAcc(0)`.
    pub relative_error: Option<f64>,
}

pub const ROBUSTNESS_CSV_HEADER: &str = "e,recall_neg,recall_pos,patch_acc,relative_error";

impl RobustnessRow {
    pub fn to_csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        format!(
            "{},{},{},{},{}",
            self.e,
            f(self.recall_neg),
            f(self.recall_pos),
            f(self.patch_acc),
            f(self.relative_error)
        )
    }
}

/// Evaluates the model with every pair misregistered by each `E` in `e_list`.
pub fn registration_robustness<C: Classifier>(model: &C, set: &[PatchPair], e_list: &[usize], beta: f64, threshold: f64) -> Result<Vec<RobustnessRow>> {
    let run = |e: usize| -> Result<MetricsReport> {
        let shifted: Vec<PatchPair> = set.iter().map(|p| apply_registration_error(p, e)).collect::<Result<_>>()?;
        evaluate(model, &shifted, beta, threshold)
    };
    let base = run(0)?;
    let mut rows = Vec::new();
    for &e in e_list {
        let r = if e == 0 { base.clone() } else { run(e)? };
        let relative_error = match (base.patch_acc, r.patch_acc) {
            (Some(b), Some(p)) if b > 0.0 => Some((b - p) / b),
            _ => None,
        };
        rows.push(RobustnessRow {
            e,
            recall_neg: r.recall_neg,
            recall_pos: r.recall_pos,
            patch_acc: r.patch_acc,
            relative_error,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_thirds() {
        let m: Vec<f64> = (0..90).map(|e| lr_multiplier(e, 90)).collect();
        assert_eq!(m[29], 1.0);
        assert_eq!(m[30], 0.1);
        assert_eq!(m[59], 0.1);
        assert_eq!(m[60], 0.01);
        assert_eq!(m[89], 0.01);
    }

    #[test]
    fn epochs_must_split_in_thirds() {
        let cfg = TrainConfig { epochs: 10, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { allow_uneven_schedule: true, ..cfg };
        cfg.validate().unwrap();
    }
}
