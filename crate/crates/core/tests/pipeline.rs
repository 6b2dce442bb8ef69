use lpcd_core::dataset::{synth_generate, tile, ScenePair, SynthConfig};
use lpcd_core::metrics::metrics;
use lpcd_core::pipeline::{run_large_image_cd, DiffBaseline, OracleFilter, OracleStub, PixelStage};
use lpcd_core::tensor::Tensor;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 100x100 scene, 10x10 tiles, with changes confined to `changed` tiles.
fn grid_scene(changed: usize, seed: u64) -> ScenePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t1 = Tensor::from_fn([3, 100, 100], |_| rng.gen_range(0.0..1.0));
    let mut t2 = t1.clone();
    let mut mask = Tensor::zeros([1, 100, 100]);
    for t in sample(&mut rng, 100, changed).into_vec() {
        let (r0, c0) = (10 * (t / 10), 10 * (t % 10));
        let (h, w) = (rng.gen_range(1..=10), rng.gen_range(1..=10));
        let (dy, dx) = (rng.gen_range(0..=10 - h), rng.gen_range(0..=10 - w));
        for y in r0 + dy..r0 + dy + h {
            for x in c0 + dx..c0 + dx + w {
                mask.data_mut()[y * 100 + x] = 1.0;
                for c in 0..3 {
                    let v = &mut t2.data_mut()[(c * 100 + y) * 100 + x];
                    *v = 1.0 - *v;
                }
            }
        }
    }
    ScenePair { t1, t2, mask }
}

#[test]
fn oracle_filter_counts() {
    let scene = grid_scene(10, 1);
    let out = run_large_image_cd(&scene, Some(&OracleFilter), &OracleStub, 10).unwrap();
    let s = &out.stats;
    assert_eq!(s.total_patches, 100);
    assert_eq!(s.pixel_stage_invocations, 10);
    assert_eq!(s.patches_passed, 10);
    assert_eq!(s.changed_patches, 10);
    assert_eq!(s.changed_passed, 10);
    assert_eq!(out.map, scene.mask);
    let r = metrics(s.pixel_counts, 1.0).unwrap();
    assert_eq!(r.recall_pos, Some(1.0));
    assert_eq!(r.precision_pos, Some(1.0));
}

#[test]
fn no_filter_equals_per_tile_stage() {
    let scene = grid_scene(25, 2);
    let stage = DiffBaseline { threshold: 0.3 };
    let out = run_large_image_cd(&scene, None, &stage, 10).unwrap();
    assert_eq!(out.stats.pixel_stage_invocations, 100);
    let mut expect = vec![0.0; 100 * 100];
    for p in tile(&scene, 0, 10, 0.0, 1).unwrap() {
        let m = stage.detect(&p).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                expect[(p.origin.0 + y) * 100 + p.origin.1 + x] = m.data()[y * 10 + x];
            }
        }
    }
    assert_eq!(out.map.data(), expect.as_slice());

    let filtered = run_large_image_cd(&scene, Some(&OracleFilter), &stage, 10).unwrap();
    assert!(filtered.stats.pixel_stage_invocations <= out.stats.pixel_stage_invocations);
}

#[test]
fn repeated_runs_agree_except_timings() {
    let scene = grid_scene(30, 3);
    let stage = DiffBaseline { threshold: 0.2 };
    let a = run_large_image_cd(&scene, Some(&OracleFilter), &stage, 10).unwrap();
    let b = run_large_image_cd(&scene, Some(&OracleFilter), &stage, 10).unwrap();
    assert_eq!(a.map, b.map);
    let strip = |mut s: lpcd_core::pipeline::PipelineStats| {
        s.filter_time = 0.0;
        s.pixel_time = 0.0;
        s
    };
    assert_eq!(strip(a.stats.clone()), strip(b.stats.clone()));
    assert!(a.stats.filter_time >= 0.0 && a.stats.pixel_time >= 0.0);
}

/// On a synthetic scene with photometric jitter, pixel F1 of the difference
/// baseline rises with the threshold while pseudo-changes are suppressed,
/// peaks, then falls as real changes are missed.
#[test]
fn diff_threshold_sweep_peaks() {
    let cfg = SynthConfig {
        scene_size: 128,
        n_scenes: 1,
        change_min_object: 12,
        change_max_object: 32,
        ..SynthConfig::default()
    };
    let scene = &synth_generate(&cfg, 8).unwrap()[0];
    let f1: Vec<f64> = (0..=20)
        .map(|i| {
            let stage = DiffBaseline { threshold: i as f64 * 0.05 };
            let out = run_large_image_cd(scene, None, &stage, 32).unwrap();
            metrics(out.stats.pixel_counts, 1.0).unwrap().f_beta.unwrap_or(0.0)
        })
        .collect();
    let peak = (0..f1.len()).max_by(|&a, &b| f1[a].partial_cmp(&f1[b]).unwrap()).unwrap();
    assert!(peak > 0 && peak < f1.len() - 1, "{f1:?}");
    assert!(f1[..=peak].windows(2).all(|w| w[1] >= w[0] - 1e-12), "{f1:?}");
    assert!(f1[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-12), "{f1:?}");
}
