//! Two-stage large-image change detection: a patch-level filter decides which
//! tiles reach an expensive pixel-level stage, and the per-tile maps are
//! merged back into a scene-sized map.

use std::path::Path;
use std::time::Instant;

use lpcd_tensor::Tensor;
use rayon::prelude::*;

use crate::dataset::{tile, PatchPair, ScenePair};
use crate::error::{Error, Result};
use crate::metrics::ConfusionCounts;
use crate::model::Classifier;
use crate::train::predict_all;

/// Produces a binary `[1, P, P]` change map for one patch pair.
pub trait PixelStage: Sync {
    fn detect(&self, pair: &PatchPair) -> std::result::Result<Tensor, String>;
}

/// Chooses which patches go on to the pixel stage.
pub trait PatchFilter: Sync {
    fn select(&self, patches: &[PatchPair]) -> Result<Vec<bool>>;
}

/// Returns the ground-truth mask of the patch.
pub struct OracleStub;

impl PixelStage for OracleStub {
    fn detect(&self, pair: &PatchPair) -> std::result::Result<Tensor, String> {
        pair.mask.clone().ok_or_else(|| "patch carries no ground-truth mask".to_string())
    }
}

/// Marks pixels whose mean absolute color difference exceeds `threshold`.
pub struct DiffBaseline {
    pub threshold: f64,
}

impl PixelStage for DiffBaseline {
    fn detect(&self, pair: &PatchPair) -> std::result::Result<Tensor, String> {
        let [c, h, w] = <[usize; 3]>::try_from(pair.t1.shape()).map_err(|_| "expected [C, H, W] images".to_string())?;
        if pair.t2.shape() != pair.t1.shape() {
            return Err(format!("image shapes {:?} and {:?} differ", pair.t1.shape(), pair.t2.shape()));
        }
        let (a, b) = (pair.t1.data(), pair.t2.data());
        let plane = h * w;
        let map = (0..plane)
            .map(|i| {
                let d: f64 = (0..c).map(|ch| (a[ch * plane + i] - b[ch * plane + i]).abs()).sum::<f64>() / c as f64;
                (d > self.threshold) as u8 as f64
            })
            .collect();
        Tensor::new([1, h, w], map).map_err(|e| e.to_string())
    }
}

/// Passes exactly the patches whose ground-truth label is changed.
pub struct OracleFilter;

impl PatchFilter for OracleFilter {
    fn select(&self, patches: &[PatchPair]) -> Result<Vec<bool>> {
        Ok(patches.iter().map(|p| p.label == 1).collect())
    }
}

/// Passes patches whose predicted change probability exceeds `threshold`.
pub struct ModelFilter<'a, C> {
    pub model: &'a C,
    pub threshold: f64,
}

impl<C: Classifier> PatchFilter for ModelFilter<'_, C> {
    fn select(&self, patches: &[PatchPair]) -> Result<Vec<bool>> {
        Ok(predict_all(self.model, patches)?.into_iter().map(|p| p > self.threshold).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineStats {
    pub total_patches: usize,
    pub patches_passed: usize,
    /// Ground-truth changed patches, and how many of them the filter passed.
    pub changed_patches: usize,
    pub changed_passed: usize,
    pub pixel_stage_invocations: usize,
    /// Seconds, monotonic clock.
    pub filter_time: f64,
    pub pixel_time: f64,
    pub pixel_counts: ConfusionCounts,
}

impl PipelineStats {
    pub const CSV_HEADER: &'static str = "total_patches,patches_passed,changed_patches,changed_passed,pixel_stage_invocations,filter_time,pixel_time,tp,tn,fp,fn";

    pub fn to_csv_row(&self) -> String {
        let c = &self.pixel_counts;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.total_patches,
            self.patches_passed,
            self.changed_patches,
            self.changed_passed,
            self.pixel_stage_invocations,
            self.filter_time,
            self.pixel_time,
            c.tp,
            c.tn,
            c.fp,
            c.fn_
        )
    }

    pub fn to_json(&self) -> String {
        let c = &self.pixel_counts;
        format!(
            "{{\"total_patches\": {}, \"patches_passed\": {}, \"changed_patches\": {}, \"changed_passed\": {}, \"pixel_stage_invocations\": {}, \"filter_time\": {}, \"pixel_time\": {}, \"tp\": {}, \"tn\": {}, \"fp\": {}, \"fn\": {}}}",
            self.total_patches,
            self.patches_passed,
            self.changed_patches,
            self.changed_passed,
            self.pixel_stage_invocations,
            self.filter_time,
            self.pixel_time,
            c.tp,
            c.tn,
            c.fp,
            c.fn_
        )
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    /// Merged binary change map, `[1, H, W]`.
    pub map: Tensor,
    pub stats: PipelineStats,
}

/// Tiles `scene` without overlap (a clamped final window only covers pixels
/// the regular grid missed), filters the tiles, runs `stage` on those that
/// pass and merges the results. Rejected tiles stay zero.
pub fn run_large_image_cd(scene: &ScenePair, filter: Option<&dyn PatchFilter>, stage: &dyn PixelStage, patch: usize) -> Result<PipelineOutput> {
    let patches = tile(scene, 0, patch, 0.0, 1)?;
    let (h, w) = scene.dims();

    let start = Instant::now();
    let selected = match filter {
        Some(f) => f.select(&patches)?,
        None => vec![true; patches.len()],
    };
    let filter_time = start.elapsed().as_secs_f64();
    if selected.len() != patches.len() {
        return Err(Error::InvalidArgument(format!(
            "filter returned {} decisions for {} patches",
            selected.len(),
            patches.len()
        )));
    }

    let chosen: Vec<usize> = (0..patches.len()).filter(|&i| selected[i]).collect();
    let start = Instant::now();
    let maps: Vec<Tensor> = chosen
        .par_iter()
        .map(|&i| {
            let p = &patches[i];
            let fail = |reason: String| Error::PixelStage {
                patch: i,
                origin: p.origin,
                reason,
            };
            let m = stage.detect(p).map_err(fail)?;
            if m.shape() != [1, patch, patch] {
                return Err(fail(format!("returned shape {:?}, expected [1, {patch}, {patch}]", m.shape())));
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let pixel_time = start.elapsed().as_secs_f64();

    let mut merged = vec![0.0; h * w];
    let mut written = vec![false; h * w];
    let mut by_patch: Vec<Option<&Tensor>> = vec![None; patches.len()];
    for (&i, m) in chosen.iter().zip(&maps) {
        by_patch[i] = Some(m);
    }
    for (p, m) in patches.iter().zip(by_patch) {
        let (r0, c0) = p.origin;
        for y in 0..patch {
            for x in 0..patch {
                let idx = (r0 + y) * w + c0 + x;
                if !written[idx] {
                    written[idx] = true;
                    merged[idx] = m.map_or(0.0, |m| (m.data()[y * patch + x] != 0.0) as u8 as f64);
                }
            }
        }
    }

    let mut pixel_counts = ConfusionCounts::default();
    for (pred, truth) in merged.iter().zip(scene.mask.data()) {
        pixel_counts.add(*pred != 0.0, *truth != 0.0);
    }
    let changed: Vec<bool> = patches.iter().map(|p| p.label == 1).collect();
    let stats = PipelineStats {
        total_patches: patches.len(),
        patches_passed: chosen.len(),
        changed_patches: changed.iter().filter(|&&c| c).count(),
        changed_passed: chosen.iter().filter(|&&i| changed[i]).count(),
        pixel_stage_invocations: maps.len(),
        filter_time,
        pixel_time,
        pixel_counts,
    };
    Ok(PipelineOutput {
        map: Tensor::new([1, h, w], merged)?,
        stats,
    })
}

/// Writes a `[1, H, W]` map in [0, 1] as a binary 8-bit PGM.
pub fn write_pgm(map: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = match map.shape() {
        &[1, h, w] => (h, w),
        s => return Err(Error::InvalidArgument(format!("expected a [1, H, W] map, got {s:?}"))),
    };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(map.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
