use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Tallies predictions against labels; both are 0/1.
    pub fn tally(predicted: &[u8], labels: &[u8]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            c.add(p != 0, y != 0);
        }
        Ok(c)
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `(beta + 1) / (beta / a + 1 / b)`; a zero rate drives the result to 0.
fn weighted_harmonic(beta: f64, a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((beta + 1.0) / (beta / a? + 1.0 / b?))
}

/// Metrics derived from one confusion matrix. `None` marks a metric whose
/// denominator is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub beta: f64,
    pub recall_pos: Option<f64>,
    pub recall_neg: Option<f64>,
    pub precision_pos: Option<f64>,
    pub f_beta: Option<f64>,
    pub patch_acc: Option<f64>,
    pub mcc: Option<f64>,
    pub kld: Option<f64>,
    pub jsd: Option<f64>,
}

pub fn metrics(counts: ConfusionCounts, beta: f64) -> Result<MetricsReport> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if counts.total() == 0 {
        return Err(Error::InvalidArgument("no samples to compute metrics over".into()));
    }
    let ConfusionCounts { tp, tn, fp, fn_ } = counts;
    let recall_pos = ratio(tp, tp + fn_);
    let recall_neg = ratio(tn, tn + fp);
    let precision_pos = ratio(tp, tp + fp);
    let den = (tp + fp) as u128 * (tp + fn_) as u128 * (tn + fp) as u128 * (tn + fn_) as u128;
    let num = tp as i128 * tn as i128 - fp as i128 * fn_ as i128;
    let mcc = (den > 0).then(|| num as f64 / (den as f64).sqrt());
    Ok(MetricsReport {
        counts,
        beta,
        recall_pos,
        recall_neg,
        precision_pos,
        f_beta: weighted_harmonic(beta, recall_pos, precision_pos),
        patch_acc: weighted_harmonic(beta, recall_pos, recall_neg),
        mcc,
        kld: None,
        jsd: None,
    })
}

fn fmt_opt(v: Option<f64>, undefined: &str) -> String {
    v.map_or_else(|| undefined.to_string(), |x| x.to_string())
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "tp,tn,fp,fn,beta,recall_pos,recall_neg,precision_pos,f_beta,patch_acc,mcc,kld,jsd";

    fn values(&self) -> [(&'static str, Option<f64>); 8] {
        [
            ("recall_pos", self.recall_pos),
            ("recall_neg", self.recall_neg),
            ("precision_pos", self.precision_pos),
            ("f_beta", self.f_beta),
            ("patch_acc", self.patch_acc),
            ("mcc", self.mcc),
            ("kld", self.kld),
            ("jsd", self.jsd),
        ]
    }

    /// Flat JSON object in `CSV_HEADER` order; undefined metrics are `null`.
    pub fn to_json(&self) -> String {
        let c = &self.counts;
        let mut s = format!(
            "{{\"tp\": {}, \"tn\": {}, \"fp\": {}, \"fn\": {}, \"beta\": {}",
            c.tp, c.tn, c.fp, c.fn_, self.beta
        );
        for (k, v) in self.values() {
            write!(s, ", \"{k}\": {}", fmt_opt(v, "null")).unwrap();
        }
        s.push('}');
        s
    }

    /// One CSV row matching `CSV_HEADER`; undefined metrics are `undefined`.
    pub fn to_csv_row(&self) -> String {
        let c = &self.counts;
        let mut s = format!("{},{},{},{},{}", c.tp, c.tn, c.fp, c.fn_, self.beta);
        for (_, v) in self.values() {
            write!(s, ",{}", fmt_opt(v, "undefined")).unwrap();
        }
        s
    }
}
