use lpcd_tensor::Tensor;

use super::{PatchPair, ScenePair};
use crate::error::{Error, Result};

/// Window offsets along one axis: `0, stride, 2*stride, ...` plus a final
/// window clamped to `dim - patch` when the regular grid stops short.
pub fn window_positions(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = dim - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// `round(patch * (1 - overlap))`, at least 1.
pub fn tile_stride(patch: usize, overlap: f64) -> usize {
    ((patch as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Copies the `[C, size, size]` window at `(row, col)` out of a `[C, H, W]` tensor.
pub fn crop(t: &Tensor, row: usize, col: usize, size: usize) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    debug_assert!(row + size <= h && col + size <= w);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in row..row + size {
            let base = (ch * h + y) * w + col;
            data.extend_from_slice(&t.data()[base..base + size]);
        }
    }
    Tensor::new([c, size, size], data).expect("crop shape")
}

/// Cuts a scene into square patch pairs. A patch is labelled changed when its
/// window holds at least `min_change_pixels` changed mask pixels.
pub fn tile(scene: &ScenePair, scene_index: usize, patch: usize, overlap: f64, min_change_pixels: usize) -> Result<Vec<PatchPair>> {
    let (h, w) = scene.dims();
    if patch == 0 || patch > h.min(w) {
        return Err(Error::InvalidArgument(format!("patch {patch} does not fit a {h}x{w} scene")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!("overlap {overlap} outside [0, 1)")));
    }
    let stride = tile_stride(patch, overlap);
    let mut out = Vec::new();
    for &row in &window_positions(h, patch, stride) {
        for &col in &window_positions(w, patch, stride) {
            let mask = crop(&scene.mask, row, col, patch);
            let changed = mask.data().iter().filter(|&&v| v != 0.0).count();
            out.push(PatchPair {
                t1: crop(&scene.t1, row, col, patch),
                t2: crop(&scene.t2, row, col, patch),
                label: (changed >= min_change_pixels.max(1)) as u8,
                scene: scene_index,
                origin: (row, col),
                mask: Some(mask),
            });
        }
    }
    Ok(out)
}
