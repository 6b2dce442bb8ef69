use lpcd_tensor::{Tape, Var};

use crate::error::{Error, Result};

/// Per-class weights of the weighted cross-entropy; `w0` applies to
/// unchanged samples, `w1` to changed ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub w0: f64,
    pub w1: f64,
}

impl ClassWeights {
    pub fn new(w0: f64, w1: f64) -> Result<Self> {
        if !(w0 > 0.0 && w1 > 0.0) || (w0 + w1 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "class weights ({w0}, {w1}) must be positive and sum to 1"
            )));
        }
        Ok(ClassWeights { w0, w1 })
    }

    pub fn balanced() -> Self {
        ClassWeights { w0: 0.5, w1: 0.5 }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.w0, self.w1]
    }
}

/// `w0 = n_changed / n_total`, `w1 = 1 - w0`.
pub fn class_weights(n_changed: usize, n_total: usize) -> Result<ClassWeights> {
    if n_changed == 0 || n_changed >= n_total {
        return Err(Error::InvalidArgument(format!(
            "cannot derive class weights from {n_changed} changed of {n_total}; set explicit weights"
        )));
    }
    let w0 = n_changed as f64 / n_total as f64;
    Ok(ClassWeights { w0, w1: 1.0 - w0 })
}

/// Mean over the batch of `-w[y] * log softmax(logits)[y]`.
pub fn wce_loss(tape: &mut Tape, logits: Var, labels: &[u8], w: ClassWeights) -> Result<Var> {
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("label {bad} is not 0 or 1")));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let labels: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    let lp = tape.log_softmax(logits)?;
    Ok(tape.weighted_nll(lp, &labels, &w.as_array())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lpcd_tensor::Tensor;

    #[test]
    fn weight_rule() {
        let w = class_weights(15, 100).unwrap();
        assert_eq!((w.w0, w.w1), (0.15, 0.85));
        let w = class_weights(18, 100).unwrap();
        assert_eq!(w.w0, 0.18);
        assert!((w.w1 - 0.82).abs() < 1e-12);
        let w = class_weights(7, 14).unwrap();
        assert_eq!((w.w0, w.w1), (0.5, 0.5));
        assert!(class_weights(0, 10).is_err());
        assert!(class_weights(10, 10).is_err());
        assert!(ClassWeights::new(0.0, 1.0).is_err());
        assert!(ClassWeights::new(0.3, 0.6).is_err());
    }

    #[test]
    fn rejects_bad_labels() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 2]));
        assert!(wce_loss(&mut tape, x, &[2], ClassWeights::balanced()).is_err());
    }
}
