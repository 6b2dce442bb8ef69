use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One resolution level of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub channels: usize,
    /// Basic blocks in the stage; 0 for the single-conv stem.
    pub num_blocks: usize,
    pub first_stride: usize,
}

/// What sits between the encoder and the decision network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// 1x1 conv + fixed-window max-pool at all four stages, concatenated.
    Mlfc,
    /// The same compression applied to the deepest stage only. Used for the
    /// baseline network that sensitivity analysis prunes.
    LastStage,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Mlfc => "mlfc",
            HeadKind::LastStage => "last_stage",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlfc" => Ok(HeadKind::Mlfc),
            "last_stage" => Ok(HeadKind::LastStage),
            other => Err(Error::Config(format!("unknown head kind {other:?} (expected mlfc or last_stage)"))),
        }
    }
}

/// Declarative description of the Siamese network: a single-conv stem, three
/// residual stages, the feature-compression head and a two-layer decision net.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub stem: StageSpec,
    pub stages: [StageSpec; 3],
    pub mlfc_window: usize,
    pub decision_hidden: usize,
    pub input_size: usize,
    pub head: HeadKind,
}

pub const DOWNSAMPLING: usize = 16;

impl NetworkConfig {
    /// Two blocks per stage, 8x8 pooling window, 128x128 input, hidden width 64.
    pub fn with_channels(channels: [usize; 4]) -> Self {
        let stage = |c| StageSpec {
            channels: c,
            num_blocks: 2,
            first_stride: 2,
        };
        NetworkConfig {
            stem: StageSpec {
                channels: channels[0],
                num_blocks: 0,
                first_stride: 2,
            },
            stages: [stage(channels[1]), stage(channels[2]), stage(channels[3])],
            mlfc_window: 8,
            decision_hidden: 64,
            input_size: 128,
            head: HeadKind::Mlfc,
        }
    }

    /// Unpruned ResNet18 widths with the last stage removed.
    pub fn resnet18_base() -> Self {
        Self::with_channels([64, 64, 128, 256])
    }

    /// Pruned widths reported for the building-change dataset.
    pub fn whu_preset() -> Self {
        Self::with_channels([8, 36, 36, 33])
    }

    /// Pruned widths reported for the landslide dataset.
    pub fn gz_preset() -> Self {
        Self::with_channels([15, 8, 72, 34])
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "base" | "resnet18" => Some(Self::resnet18_base()),
            "whu" => Some(Self::whu_preset()),
            "gz" => Some(Self::gz_preset()),
            _ => None,
        }
    }

    pub fn channels(&self) -> [usize; 4] {
        [
            self.stem.channels,
            self.stages[0].channels,
            self.stages[1].channels,
            self.stages[2].channels,
        ]
    }

    pub fn set_channels(&mut self, channels: [usize; 4]) {
        self.stem.channels = channels[0];
        for (s, c) in self.stages.iter_mut().zip(&channels[1..]) {
            s.channels = *c;
        }
    }

    pub fn blocks(&self) -> [usize; 3] {
        [self.stages[0].num_blocks, self.stages[1].num_blocks, self.stages[2].num_blocks]
    }

    /// Spatial side length of stage `i` (1-based; stage 1 is the stem).
    pub fn stage_size(&self, stage: usize) -> usize {
        self.input_size >> stage
    }

    /// Output channels of every compression conv: half the narrowest stage, at least 1.
    pub fn mlfc_channels(&self) -> usize {
        (self.channels().into_iter().min().unwrap_or(0) / 2).max(1)
    }

    /// Pooled side length at stage `i`.
    pub fn pooled_size(&self, stage: usize) -> usize {
        self.stage_size(stage) / self.mlfc_window
    }

    /// Stages feeding the head, in concatenation order.
    pub fn head_stages(&self) -> Vec<usize> {
        match self.head {
            HeadKind::Mlfc => vec![1, 2, 3, 4],
            HeadKind::LastStage => vec![4],
        }
    }

    /// Length of the per-image feature vector produced by the head.
    pub fn feature_len(&self) -> usize {
        self.mlfc_channels() * self.head_stages().iter().map(|&s| self.pooled_size(s).pow(2)).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.stem.num_blocks != 0 || self.stem.first_stride != 2 {
            return fail("stem must be a single stride-2 convolution (num_blocks 0, stride 2)".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.first_stride != 2 {
                return fail(format!("stage {} must start with stride 2", i + 2));
            }
            if s.num_blocks == 0 {
                return fail(format!("stage {} needs at least one block", i + 2));
            }
        }
        if let Some(i) = self.channels().iter().position(|&c| c == 0) {
            return fail(format!("stage {} has zero channels", i + 1));
        }
        if self.mlfc_window == 0 || self.decision_hidden == 0 {
            return fail("mlfc_window and decision_hidden must be positive".into());
        }
        if self.input_size == 0 || self.input_size % DOWNSAMPLING != 0 {
            return fail(format!("input_size {} is not divisible by {DOWNSAMPLING}", self.input_size));
        }
        if self.input_size % self.mlfc_window != 0 {
            return fail(format!(
                "input_size {} is not divisible by mlfc_window {}",
                self.input_size, self.mlfc_window
            ));
        }
        if self.stage_size(4) < self.mlfc_window {
            return fail(format!(
                "deepest stage is {}x{}, smaller than the {}x{} pooling window",
                self.stage_size(4),
                self.stage_size(4),
                self.mlfc_window,
                self.mlfc_window
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_feature_length() {
        let c = NetworkConfig::resnet18_base();
        c.validate().unwrap();
        assert_eq!((1..=4).map(|s| c.stage_size(s)).collect::<Vec<_>>(), [64, 32, 16, 8]);
        assert_eq!((1..=4).map(|s| c.pooled_size(s)).collect::<Vec<_>>(), [8, 4, 2, 1]);
        assert_eq!(c.mlfc_channels(), 32);
        assert_eq!(c.feature_len(), 2720);
    }

    #[test]
    fn presets_validate() {
        assert_eq!(NetworkConfig::whu_preset().feature_len(), 340);
        NetworkConfig::whu_preset().validate().unwrap();
        NetworkConfig::gz_preset().validate().unwrap();
    }

    #[test]
    fn rejects_small_input() {
        let mut c = NetworkConfig::with_channels([8, 8, 8, 8]);
        c.input_size = 64;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("pooling window"), "{err}");
        c.mlfc_window = 4;
        c.validate().unwrap();
        c.input_size = 72;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_bad_structure() {
        let mut c = NetworkConfig::resnet18_base();
        c.stages[1].first_stride = 1;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::resnet18_base();
        c.set_channels([0, 1, 1, 1]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn mlfc_channels_never_zero() {
        let c = NetworkConfig::with_channels([1, 4, 4, 4]);
        assert_eq!(c.mlfc_channels(), 1);
    }
}
