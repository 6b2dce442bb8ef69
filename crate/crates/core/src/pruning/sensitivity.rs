use std::fmt::Write as _;

use super::surgery::pruned_count;
use crate::error::{Error, Result};

/// `0.5 / (1 + exp(alpha * (l_max + l_min - 2 l) / (l_max - l_min)))`.
pub fn sensitivity(l: f64, l_min: f64, l_max: f64, alpha: f64) -> Result<f64> {
    if !(l_max > l_min) {
        return Err(Error::InvalidArgument(format!(
            "sensitivity needs l_max > l_min, got l_min = {l_min}, l_max = {l_max}"
        )));
    }
    if !(l_min..=l_max).contains(&l) {
        return Err(Error::InvalidArgument(format!("loss {l} outside [{l_min}, {l_max}]")));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    Ok(0.5 / (1.0 + (alpha * (l_max + l_min - 2.0 * l) / (l_max - l_min)).exp()))
}

/// Per-stage ratios `lambda_i = s_i * lambda` and channel counts
/// `max(1, floor(C_i * (1 - lambda_i)))`.
pub fn rectify_ratios(lambda: f64, sensitivities: [f64; 4], channels: [usize; 4]) -> Result<([f64; 4], [usize; 4])> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!("initial ratio {lambda} outside (0, 1)")));
    }
    if let Some(s) = sensitivities.iter().find(|s| !(0.0..=0.5).contains(*s)) {
        return Err(Error::InvalidArgument(format!("sensitivity {s} outside [0, 0.5]")));
    }
    let ratios = sensitivities.map(|s| s * lambda);
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = pruned_count(channels[i], ratios[i]).max(1);
    }
    Ok((ratios, out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSensitivity {
    pub channels: usize,
    pub loss: f64,
    /// `None` when every stage lost the same accuracy.
    pub sensitivity: Option<f64>,
    pub ratio: f64,
    pub new_channels: usize,
}

/// Outcome of the per-stage sensitivity analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityProfile {
    pub lambda: f64,
    pub alpha: f64,
    /// Sensitivities were replaced by `0.5 - s`.
    pub inverted: bool,
    /// All losses were equal, so the uniform ratio was used.
    pub degenerate: bool,
    pub baseline_patch_acc: f64,
    pub stages: [StageSensitivity; 4],
}

impl SensitivityProfile {
    /// Builds the profile from measured per-stage losses.
    pub fn from_losses(losses: [f64; 4], channels: [usize; 4], lambda: f64, alpha: f64, invert: bool, baseline_patch_acc: f64) -> Result<Self> {
        let l_min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let l_max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let degenerate = !(l_max > l_min);
        let (sens, ratios, new) = if degenerate {
            let ratios = [lambda; 4];
            (None, ratios, channels.map(|c| pruned_count(c, lambda).max(1)))
        } else {
            let mut s = [0.0; 4];
            for i in 0..4 {
                s[i] = sensitivity(losses[i], l_min, l_max, alpha)?;
                if invert {
                    s[i] = 0.5 - s[i];
                }
            }
            let (ratios, new) = rectify_ratios(lambda, s, channels)?;
            (Some(s), ratios, new)
        };
        let stages = std::array::from_fn(|i| StageSensitivity {
            channels: channels[i],
            loss: losses[i],
            sensitivity: sens.map(|s| s[i]),
            ratio: ratios[i],
            new_channels: new[i],
        });
        Ok(SensitivityProfile {
            lambda,
            alpha,
            inverted: invert,
            degenerate,
            baseline_patch_acc,
            stages,
        })
    }

    pub fn new_channels(&self) -> [usize; 4] {
        std::array::from_fn(|i| self.stages[i].new_channels)
    }

    pub const CSV_HEADER: &'static str = "stage,channels,loss,sensitivity,ratio,new_channels";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (i, st) in self.stages.iter().enumerate() {
            let sens = st.sensitivity.map_or_else(|| "undefined".to_string(), |v| v.to_string());
            writeln!(s, "{},{},{},{},{},{}", i + 1, st.channels, st.loss, sens, st.ratio, st.new_channels).unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "lambda = {}  alpha = {}  inverted = {}  degenerate = {}  baseline PatchAcc = {:.6}\n",
            self.lambda, self.alpha, self.inverted, self.degenerate, self.baseline_patch_acc
        );
        writeln!(s, "{:>5} {:>8} {:>12} {:>12} {:>12} {:>8}", "stage", "C", "loss", "s", "ratio", "C'").unwrap();
        for (i, st) in self.stages.iter().enumerate() {
            let sens = st.sensitivity.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            writeln!(
                s,
                "{:>5} {:>8} {:>12.6} {:>12} {:>12.6} {:>8}",
                i + 1,
                st.channels,
                st.loss,
                sens,
                st.ratio,
                st.new_channels
            )
            .unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(sensitivity(0.1, 0.2, 0.2, 4.0).is_err());
        assert!(sensitivity(0.3, 0.0, 0.2, 4.0).is_err());
        assert!(sensitivity(0.1, 0.0, 0.2, 0.0).is_err());
        assert!(rectify_ratios(0.0, [0.1; 4], [4; 4]).is_err());
        assert!(rectify_ratios(0.5, [0.6, 0.1, 0.1, 0.1], [4; 4]).is_err());
    }

    #[test]
    fn degenerate_profile_uses_uniform_ratio() {
        let p = SensitivityProfile::from_losses([0.1; 4], [64, 64, 128, 256], 0.125, 4.0, false, 0.9).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.new_channels(), [56, 56, 112, 224]);
        assert!(p.stages.iter().all(|s| s.sensitivity.is_none()));
    }

    #[test]
    fn inversion_flips_ordering() {
        let l = [0.0, 0.1, 0.3, 0.2];
        let p = SensitivityProfile::from_losses(l, [64; 4], 0.5, 4.0, true, 0.9).unwrap();
        let s: Vec<f64> = p.stages.iter().map(|s| s.sensitivity.unwrap()).collect();
        assert!(s[0] > s[1] && s[1] > s[3] && s[3] > s[2]);
        assert_eq!(p.to_csv().lines().count(), 5);
        assert_eq!(p.to_table().lines().count(), 6);
    }
}
