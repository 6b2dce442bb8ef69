//! Synthetic bi-temporal scenes: value-noise terrain, static objects, and
//! change objects inserted into or deleted from the second acquisition.

use lpcd_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ScenePair;
use crate::error::{Error, Result};

/// Where change objects go.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChangeLayout {
    /// Objects anywhere until the changed-pixel fraction reaches the target sparsity.
    Scattered,
    /// Exactly one object inside each of `round(fraction * tiles)` randomly
    /// chosen non-overlapping `tile x tile` cells; sparsity is not used.
    Tiles { tile: usize, fraction: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub scene_size: usize,
    pub n_scenes: usize,
    pub change_sparsity: f64,
    pub texture_seed: u64,
    /// Side-length range of unchanged objects.
    pub min_object: usize,
    pub max_object: usize,
    pub static_objects: usize,
    /// Side-length range of change objects.
    pub change_min_object: usize,
    pub change_max_object: usize,
    /// Amplitude of the per-channel gain/offset applied to the second image.
    pub jitter: f64,
    pub noise: f64,
    pub layout: ChangeLayout,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene_size: 256,
            n_scenes: 8,
            change_sparsity: 0.1,
            texture_seed: 0,
            min_object: 8,
            max_object: 24,
            static_objects: 12,
            change_min_object: 24,
            change_max_object: 64,
            jitter: 0.08,
            noise: 0.02,
            layout: ChangeLayout::Scattered,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if !(self.change_sparsity > 0.0 && self.change_sparsity < 1.0) {
            return fail(format!("change_sparsity must lie in (0, 1), got {}", self.change_sparsity));
        }
        if self.scene_size < 16 || self.n_scenes == 0 {
            return fail("scene_size must be at least 16 and n_scenes positive".into());
        }
        if self.min_object < 2 || self.min_object > self.max_object || self.max_object > self.scene_size / 2 {
            return fail(format!(
                "object sizes {}..{} invalid for scene {}",
                self.min_object, self.max_object, self.scene_size
            ));
        }
        if self.change_min_object < 2
            || self.change_min_object > self.change_max_object
            || self.change_max_object > self.scene_size / 2
        {
            return fail(format!(
                "change object sizes {}..{} invalid for scene {}",
                self.change_min_object, self.change_max_object, self.scene_size
            ));
        }
        if !(0.0..0.5).contains(&self.jitter) || !(0.0..0.5).contains(&self.noise) {
            return fail("jitter and noise must lie in [0, 0.5)".into());
        }
        if let ChangeLayout::Tiles { tile, fraction } = self.layout {
            if tile == 0 || tile > self.scene_size || tile < self.change_min_object + 2 || !(fraction > 0.0 && fraction <= 1.0) {
                return fail(format!("tile layout ({tile}, {fraction}) invalid"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy)]
struct Object {
    top: usize,
    left: usize,
    h: usize,
    w: usize,
    shape: Shape,
    color: [f64; 3],
}

impl Object {
    fn contains(&self, y: usize, x: usize) -> bool {
        if y < self.top || x < self.left || y >= self.top + self.h || x >= self.left + self.w {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let dy = (y - self.top) as f64 + 0.5 - self.h as f64 / 2.0;
                let dx = (x - self.left) as f64 + 0.5 - self.w as f64 / 2.0;
                (dy / (self.h as f64 / 2.0)).powi(2) + (dx / (self.w as f64 / 2.0)).powi(2) <= 1.0
            }
        }
    }

    fn paint(&self, img: &mut [f64], size: usize) {
        for y in self.top..self.top + self.h {
            for x in self.left..self.left + self.w {
                if self.contains(y, x) {
                    for (c, v) in self.color.iter().enumerate() {
                        img[(c * size + y) * size + x] = *v;
                    }
                }
            }
        }
    }

    fn mark(&self, mask: &mut [f64], size: usize) -> usize {
        let mut added = 0;
        for y in self.top..self.top + self.h {
            for x in self.left..self.left + self.w {
                if self.contains(y, x) && mask[y * size + x] == 0.0 {
                    mask[y * size + x] = 1.0;
                    added += 1;
                }
            }
        }
        added
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Saturated colors keep objects distinguishable from the muted terrain.
    let mut c = [rng.gen_range(0.0..0.25), rng.gen_range(0.0..0.25), rng.gen_range(0.0..0.25)];
    let hi = rng.gen_range(0..3);
    c[hi] = rng.gen_range(0.75..1.0);
    if rng.gen_bool(0.5) {
        c[(hi + 1) % 3] = rng.gen_range(0.6..1.0);
    }
    c
}

/// Two octaves of bilinearly interpolated lattice noise around a per-channel base tone.
fn terrain(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![0.0; 3 * size * size];
    let base: [f64; 3] = [rng.gen_range(0.3..0.6), rng.gen_range(0.3..0.6), rng.gen_range(0.3..0.6)];
    for (cell, amp) in [(32usize, 0.15), (8usize, 0.06)] {
        let g = size / cell + 2;
        let lattice: Vec<f64> = (0..3 * g * g).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for c in 0..3 {
            for y in 0..size {
                let fy = y as f64 / cell as f64;
                let (y0, ty) = (fy.floor() as usize, fy.fract());
                for x in 0..size {
                    let fx = x as f64 / cell as f64;
                    let (x0, tx) = (fx.floor() as usize, fx.fract());
                    let at = |yy: usize, xx: usize| lattice[(c * g + yy) * g + xx];
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                    let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                    img[(c * size + y) * size + x] += amp * (top * (1.0 - ty) + bot * ty);
                }
            }
        }
    }
    for c in 0..3 {
        for v in &mut img[c * size * size..(c + 1) * size * size] {
            *v = (*v + base[c]).clamp(0.0, 1.0);
        }
    }
    img
}

fn random_object(rng: &mut ChaCha8Rng, sides: (usize, usize), top_range: (usize, usize), left_range: (usize, usize)) -> Object {
    let (min_side, max_side) = (sides.0, sides.1.max(sides.0));
    let h = rng.gen_range(min_side..=max_side);
    let w = rng.gen_range(min_side..=max_side);
    let top = rng.gen_range(top_range.0..=top_range.1.saturating_sub(h).max(top_range.0));
    let left = rng.gen_range(left_range.0..=left_range.1.saturating_sub(w).max(left_range.0));
    let shape = if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse };
    Object {
        top,
        left,
        h,
        w,
        shape,
        color: random_color(rng),
    }
}

/// True when `o`, grown by `margin`, touches any marked mask pixel.
fn collides(o: &Object, mask: &[f64], size: usize, margin: usize) -> bool {
    let y0 = o.top.saturating_sub(margin);
    let x0 = o.left.saturating_sub(margin);
    let y1 = (o.top + o.h + margin).min(size);
    let x1 = (o.left + o.w + margin).min(size);
    (y0..y1).any(|y| (x0..x1).any(|x| mask[y * size + x] != 0.0))
}

const MAX_ATTEMPTS: usize = 2000;

fn generate_scene(cfg: &SynthConfig, seed: u64, index: usize) -> Result<ScenePair> {
    let size = cfg.scene_size;
    let mut tex_rng = ChaCha8Rng::seed_from_u64(cfg.texture_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (index as u64).rotate_left(32));
    let mut t1 = terrain(size, &mut tex_rng);
    for _ in 0..cfg.static_objects {
        random_object(&mut rng, (cfg.min_object, cfg.max_object), (0, size), (0, size)).paint(&mut t1, size);
    }
    let mut t2 = t1.clone();
    let mut mask = vec![0.0; size * size];

    let place = |o: Object, t1: &mut Vec<f64>, t2: &mut Vec<f64>, mask: &mut Vec<f64>, rng: &mut ChaCha8Rng| -> usize {
        if rng.gen_bool(0.5) {
            o.paint(t2, size);
        } else {
            // Deletion: the object exists only in the first image.
            o.paint(t1, size);
        }
        o.mark(mask, size)
    };

    match cfg.layout {
        ChangeLayout::Scattered => {
            let target = (cfg.change_sparsity * (size * size) as f64).round() as usize;
            let mut changed = 0;
            let mut attempts = 0;
            while changed < target {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(Error::InvalidArgument(format!(
                        "cannot reach change sparsity {} in a {size}x{size} scene: placed {changed} of {target} pixels",
                        cfg.change_sparsity
                    )));
                }
                let remaining = target - changed;
                let max_side = ((remaining as f64).sqrt().ceil() as usize + 1).min(cfg.change_max_object);
                let o = random_object(&mut rng, (cfg.change_min_object, max_side), (0, size), (0, size));
                if collides(&o, &mask, size, 1) {
                    continue;
                }
                changed += place(o, &mut t1, &mut t2, &mut mask, &mut rng);
            }
        }
        ChangeLayout::Tiles { tile, fraction } => {
            let per_axis = size / tile;
            let mut cells: Vec<usize> = (0..per_axis * per_axis).collect();
            cells.shuffle(&mut rng);
            let n = ((fraction * cells.len() as f64).round() as usize).max(1);
            for &cell in &cells[..n] {
                let (ty, tx) = ((cell / per_axis) * tile, (cell % per_axis) * tile);
                let sides = (cfg.change_min_object, cfg.change_max_object.min(tile - 2));
                let o = random_object(&mut rng, sides, (ty + 1, ty + tile - 1), (tx + 1, tx + tile - 1));
                place(o, &mut t1, &mut t2, &mut mask, &mut rng);
            }
        }
    }

    // Pseudo-change: global photometric shift plus sensor noise on the second image.
    for c in 0..3 {
        let gain = 1.0 + rng.gen_range(-cfg.jitter..=cfg.jitter);
        let offset = rng.gen_range(-cfg.jitter..=cfg.jitter) * 0.5;
        for v in &mut t2[c * size * size..(c + 1) * size * size] {
            let noise = if cfg.noise > 0.0 { rng.gen_range(-cfg.noise..cfg.noise) } else { 0.0 };
            *v = (gain * *v + offset + noise).clamp(0.0, 1.0);
        }
    }

    Ok(ScenePair {
        t1: Tensor::new([3, size, size], t1)?,
        t2: Tensor::new([3, size, size], t2)?,
        mask: Tensor::new([1, size, size], mask)?,
    })
}

/// Generates `cfg.n_scenes` scene pairs. Each scene depends only on
/// `(cfg, seed, index)`, so output is identical regardless of thread count.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<ScenePair>> {
    cfg.validate()?;
    (0..cfg.n_scenes).into_par_iter().map(|i| generate_scene(cfg, seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_in_unit_range_and_mask_binary() {
        let cfg = SynthConfig {
            scene_size: 64,
            n_scenes: 2,
            max_object: 16,
            change_min_object: 8,
            change_max_object: 16,
            ..Default::default()
        };
        for s in synth_generate(&cfg, 5).unwrap() {
            assert!(s.t1.data().iter().chain(s.t2.data()).all(|v| (0.0..=1.0).contains(v)));
            assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn infeasible_sparsity_is_an_error() {
        let cfg = SynthConfig {
            scene_size: 32,
            n_scenes: 1,
            change_sparsity: 0.95,
            max_object: 16,
            change_min_object: 8,
            change_max_object: 16,
            ..Default::default()
        };
        assert!(synth_generate(&cfg, 1).is_err());
    }

    #[test]
    fn tile_layout_marks_requested_cells() {
        let cfg = SynthConfig {
            scene_size: 128,
            n_scenes: 1,
            layout: ChangeLayout::Tiles { tile: 32, fraction: 0.25 },
            change_min_object: 8,
            change_max_object: 24,
            ..Default::default()
        };
        let s = &synth_generate(&cfg, 2).unwrap()[0];
        let mut changed_cells = 0;
        for ty in 0..4 {
            for tx in 0..4 {
                let any = (0..32).any(|y| (0..32).any(|x| s.mask.data()[(ty * 32 + y) * 128 + tx * 32 + x] != 0.0));
                changed_cells += any as usize;
            }
        }
        assert_eq!(changed_cells, 4);
    }
}
