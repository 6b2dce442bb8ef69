use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Bin of probability `p` among `bins` equal-width bins on [0, 1]; p = 1 falls
/// in the last bin.
pub fn bin_index(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor() as usize).min(bins - 1)
}

/// Normalized histograms of the predicted probabilities of positive (`p`)
/// and negative (`q`) samples. Empty bins are floored at `epsilon` before
/// normalization.
pub fn probability_histograms(probs: &[f64], labels: &[u8], bins: usize, epsilon: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut counts = [vec![0.0; bins], vec![0.0; bins]];
    for (&p, &y) in probs.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
        counts[(y != 0) as usize][bin_index(p, bins)] += 1.0;
    }
    let normalize = |c: &[f64], class: &str| -> Result<Vec<f64>> {
        if c.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(format!("no {class} samples for histogram")));
        }
        let floored: Vec<f64> = c.iter().map(|&v| v.max(epsilon)).collect();
        let total: f64 = floored.iter().sum();
        Ok(floored.iter().map(|v| v / total).collect())
    };
    Ok((normalize(&counts[1], "positive")?, normalize(&counts[0], "negative")?))
}

fn check_distribution(name: &str, d: &[f64]) -> Result<()> {
    if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has negative or non-finite entries")));
    }
    let s: f64 = d.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Kullback-Leibler divergence D(p || q) in bits.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidArgument(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let mut d = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::InvalidArgument(format!("q is zero at index {i} where p is positive")));
            }
            d += pi * (pi / qi).log2();
        }
    }
    Ok(d.max(0.0))
}

/// Jensen-Shannon divergence in bits, within [0, 1].
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let d = 0.5 * kld(p, &m)? + 0.5 * kld(q, &m)?;
    Ok(d.clamp(0.0, 1.0))
}
