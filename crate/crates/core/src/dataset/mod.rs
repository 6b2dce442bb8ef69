//! Synthetic scenes, tiling into labelled patch pairs, registration-error
//! augmentation, splitting and persistence.

mod registration;
mod split;
mod store;
mod synth;
mod tile;

use lpcd_tensor::Tensor;
use sha2::Digest as _;

pub use registration::{apply_registration_error, resize_bilinear};
pub use split::{split, Split};
pub use store::{hex, load_dataset, save_dataset, MANIFEST, PATCH_DIR};
pub use synth::{synth_generate, ChangeLayout, SynthConfig};
pub use tile::{crop, tile, tile_stride, window_positions};

use crate::error::{Error, Result};

/// Two co-registered acquisitions (`[3, H, W]`, values in [0, 1]) and the
/// binary change mask (`[1, H, W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub t1: Tensor,
    pub t2: Tensor,
    pub mask: Tensor,
}

impl ScenePair {
    pub fn dims(&self) -> (usize, usize) {
        (self.t1.shape()[1], self.t1.shape()[2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub t1: Tensor,
    pub t2: Tensor,
    /// 1 for changed, 0 for unchanged.
    pub label: u8,
    pub scene: usize,
    /// Top-left `(row, col)` of the window in its scene.
    pub origin: (usize, usize),
    pub mask: Option<Tensor>,
}

impl PatchPair {
    pub fn size(&self) -> usize {
        self.t1.shape()[1]
    }
}

/// Stacks the first and second images of `pairs` into two `[N, 3, P, P]` batches.
pub fn batch(pairs: &[&PatchPair]) -> Result<(Tensor, Tensor)> {
    let first = pairs.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mut shape = vec![pairs.len()];
    shape.extend_from_slice(first.t1.shape());
    let mut a = Vec::with_capacity(pairs.len() * first.t1.numel());
    let mut b = Vec::with_capacity(pairs.len() * first.t1.numel());
    for p in pairs {
        for t in [&p.t1, &p.t2] {
            if t.shape() != first.t1.shape() {
                return Err(lpcd_tensor::TensorError::ShapeMismatch {
                    op: "batch",
                    lhs: first.t1.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                }
                .into());
            }
        }
        a.extend_from_slice(p.t1.data());
        b.extend_from_slice(p.t2.data());
    }
    Ok((Tensor::new(shape.clone(), a)?, Tensor::new(shape, b)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub patch_size: usize,
    pub overlap: f64,
    pub min_change_pixels: usize,
    pub seed: u64,
    /// Hash of the generator configuration that produced the scenes.
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: usize,
    pub scene: usize,
    pub origin: (usize, usize),
    pub label: u8,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub meta: DatasetMeta,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// `[unchanged, changed]` counts within one split.
    pub fn class_counts(&self, split: Split) -> [usize; 2] {
        let mut c = [0, 0];
        for e in self.entries.iter().filter(|e| e.split == split) {
            c[e.label as usize] += 1;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub patches: Vec<PatchPair>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, patches: Vec<PatchPair>, splits: &[Split]) -> Result<Self> {
        if splits.len() != patches.len() {
            return Err(Error::InvalidArgument(format!("{} split labels for {} patches", splits.len(), patches.len())));
        }
        let entries = patches
            .iter()
            .zip(splits)
            .enumerate()
            .map(|(id, (p, &split))| ManifestEntry {
                id,
                scene: p.scene,
                origin: p.origin,
                label: p.label,
                split,
            })
            .collect();
        Ok(Dataset {
            manifest: DatasetManifest { meta, entries },
            patches,
        })
    }

    pub fn subset(&self, split: Split) -> Vec<PatchPair> {
        self.manifest
            .entries
            .iter()
            .zip(&self.patches)
            .filter(|(e, _)| e.split == split)
            .map(|(_, p)| p.clone())
            .collect()
    }
}

pub struct BuildSpec {
    pub synth: SynthConfig,
    pub patch_size: usize,
    pub overlap: f64,
    pub min_change_pixels: usize,
    pub fractions: (f64, f64, f64),
}

/// Generates scenes, tiles them and splits the patches.
pub fn build_dataset(spec: &BuildSpec, seed: u64) -> Result<Dataset> {
    let scenes = synth_generate(&spec.synth, seed)?;
    let mut patches = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        patches.extend(tile(s, i, spec.patch_size, spec.overlap, spec.min_change_pixels)?);
    }
    let splits = split(patches.len(), spec.fractions, seed ^ 0x5EED)?;
    let meta = DatasetMeta {
        patch_size: spec.patch_size,
        overlap: spec.overlap,
        min_change_pixels: spec.min_change_pixels,
        seed,
        config_hash: hex(&sha2::Sha256::digest(format!("{:?}", spec.synth).as_bytes())),
    };
    Dataset::new(meta, patches, &splits)
}
