use std::fs;

use lpcd_core::dataset::{
    apply_registration_error, build_dataset, load_dataset, save_dataset, split, synth_generate, tile, BuildSpec, ChangeLayout,
    PatchPair, ScenePair, Split, SynthConfig, MANIFEST, PATCH_DIR,
};
use lpcd_core::tensor::Tensor;
use lpcd_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scene(size: usize, seed: u64) -> ScenePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = || Tensor::from_fn([3, size, size], |_| rng.gen_range(0.0..1.0));
    let (t1, t2) = (img(), img());
    let mask = Tensor::from_fn([1, size, size], |i| ((i * 2654435761) % 97 < 3) as u8 as f64);
    ScenePair { t1, t2, mask }
}

#[test]
fn stride_arithmetic() {
    let s = random_scene(256, 0);
    let patches = tile(&s, 0, 128, 0.5, 1).unwrap();
    assert_eq!(patches.len(), 9);
    let origins: Vec<_> = patches.iter().map(|p| p.origin).collect();
    for r in [0, 64, 128] {
        for c in [0, 64, 128] {
            assert!(origins.contains(&(r, c)));
        }
    }
    let single = random_scene(128, 1);
    let p = tile(&single, 0, 128, 0.5, 1).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].origin, (0, 0));

    for (dim, patch) in [(256, 64), (192, 32), (96, 32)] {
        let stride = patch / 2;
        let n = tile(&random_scene(dim, 2), 0, patch, 0.5, 1).unwrap().len();
        assert_eq!(n, ((dim - patch) / stride + 1).pow(2));
    }
}

#[test]
fn every_pixel_is_covered_and_labels_follow_counts() {
    for (dim, patch, overlap, min_pix) in [(100, 32, 0.5, 1), (77, 20, 0.3, 4), (64, 64, 0.0, 1), (90, 25, 0.0, 10)] {
        let s = random_scene(dim, dim as u64);
        let patches = tile(&s, 3, patch, overlap, min_pix).unwrap();
        let mut covered = vec![false; dim * dim];
        for p in &patches {
            let (r0, c0) = p.origin;
            let mut count = 0;
            for y in r0..r0 + patch {
                for x in c0..c0 + patch {
                    covered[y * dim + x] = true;
                    count += (s.mask.data()[y * dim + x] != 0.0) as usize;
                    assert_eq!(p.t1.data()[(y - r0) * patch + x - c0], s.t1.data()[y * dim + x]);
                }
            }
            assert_eq!(p.label, (count >= min_pix) as u8, "origin {:?}", p.origin);
            assert_eq!(p.scene, 3);
        }
        assert!(covered.iter().all(|&c| c));
    }
}

fn patch(size: usize, seed: u64) -> PatchPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = || Tensor::from_fn([3, size, size], |_| rng.gen_range(0.0..1.0));
    PatchPair {
        t1: img(),
        t2: img(),
        label: 1,
        scene: 0,
        origin: (4, 8),
        mask: None,
    }
}

#[test]
fn registration_error_geometry() {
    let p = patch(128, 1);
    assert_eq!(apply_registration_error(&p, 0).unwrap(), p);
    let q = apply_registration_error(&p, 40).unwrap();
    assert_eq!(q.t1.shape(), [3, 128, 128]);
    assert_eq!(q.label, p.label);
    assert_eq!(q.origin, p.origin);
    // Corner samples of an aligned-corner resize come straight from the retained regions.
    let at = |t: &Tensor, c: usize, y: usize, x: usize| t.data()[(c * 128 + y) * 128 + x];
    for c in 0..3 {
        assert_eq!(at(&q.t1, c, 0, 0), at(&p.t1, c, 0, 0));
        assert_eq!(at(&q.t1, c, 127, 127), at(&p.t1, c, 87, 87));
        assert_eq!(at(&q.t2, c, 0, 0), at(&p.t2, c, 40, 40));
        assert_eq!(at(&q.t2, c, 127, 127), at(&p.t2, c, 127, 127));
    }
    assert!(apply_registration_error(&p, 128).is_err());
}

proptest! {
    #[test]
    fn registration_error_keeps_shape_and_range(e in 0usize..16, seed in 0u64..1000) {
        let p = patch(16, seed);
        let q = apply_registration_error(&p, e).unwrap();
        prop_assert_eq!(q.t1.shape(), p.t1.shape());
        prop_assert_eq!(q.t2.shape(), p.t2.shape());
        prop_assert!(q.t1.data().iter().chain(q.t2.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn split_sizes_track_fractions(n in 10usize..2000, a in 0.1f64..0.8, seed in 0u64..100) {
        let b = (1.0 - a) / 2.0;
        let s = split(n, (a, b, 1.0 - a - b), seed).unwrap();
        prop_assert_eq!(s.len(), n);
        for (f, which) in [(a, Split::Train), (b, Split::Val), (1.0 - a - b, Split::Test)] {
            let got = s.iter().filter(|&&x| x == which).count() as f64;
            prop_assert!((got - f * n as f64).abs() <= 1.0 + 1e-9);
        }
        prop_assert_eq!(s, split(n, (a, b, 1.0 - a - b), seed).unwrap());
    }
}

#[test]
fn split_rejects_empty_parts() {
    assert!(split(10, (1.0, 0.0, 0.0), 0).is_err());
    assert!(split(2, (0.5, 0.25, 0.25), 0).is_err());
    assert!(split(10, (0.5, 0.5, 0.5), 0).is_err());
}

#[test]
fn generator_is_deterministic_and_hits_sparsity() {
    let cfg = SynthConfig {
        scene_size: 128,
        n_scenes: 20,
        change_sparsity: 0.1,
        change_min_object: 12,
        change_max_object: 32,
        ..SynthConfig::default()
    };
    let a = synth_generate(&cfg, 17).unwrap();
    assert_eq!(a, synth_generate(&cfg, 17).unwrap());
    assert_ne!(a, synth_generate(&cfg, 18).unwrap());
    let changed: f64 = a.iter().map(|s| s.mask.data().iter().sum::<f64>()).sum();
    let frac = changed / (20.0 * 128.0 * 128.0);
    assert!((frac - 0.1).abs() <= 0.03, "changed fraction {frac}");
    for s in &a {
        assert!(s.t1.data().iter().chain(s.t2.data()).all(|v| (0.0..=1.0).contains(v)));
        assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
    for bad in [0.0, 1.0, -0.2] {
        let cfg = SynthConfig { change_sparsity: bad, ..cfg.clone() };
        assert!(synth_generate(&cfg, 0).is_err());
    }
}

#[test]
fn tile_layout_changes_whole_tiles() {
    let cfg = SynthConfig {
        scene_size: 256,
        n_scenes: 1,
        layout: ChangeLayout::Tiles { tile: 32, fraction: 0.1 },
        ..SynthConfig::default()
    };
    let scene = &synth_generate(&cfg, 4).unwrap()[0];
    let patches = tile(scene, 0, 32, 0.0, 1).unwrap();
    let positives = patches.iter().filter(|p| p.label == 1).count();
    assert_eq!(patches.len(), 64);
    assert!((5..=8).contains(&positives), "{positives} changed tiles");
}

fn small_spec() -> BuildSpec {
    BuildSpec {
        synth: SynthConfig {
            scene_size: 64,
            n_scenes: 3,
            change_min_object: 8,
            change_max_object: 16,
            ..SynthConfig::default()
        },
        patch_size: 32,
        overlap: 0.5,
        min_change_pixels: 1,
        fractions: (0.5, 0.25, 0.25),
    }
}

#[test]
fn store_round_trip_and_integrity() {
    let data = build_dataset(&small_spec(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&data, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, data.manifest);
    assert_eq!(back.patches, data.patches);
    for s in Split::ALL {
        let [neg, pos] = back.manifest.class_counts(s);
        let sub = back.subset(s);
        assert_eq!(sub.len(), neg + pos);
        assert_eq!(sub.iter().filter(|p| p.label == 1).count(), pos);
    }

    let files = fs::read_dir(dir.path().join(PATCH_DIR)).unwrap().count();
    assert_eq!(files, 3 * data.manifest.entries.len());

    // Tampered header hash.
    let mpath = dir.path().join(MANIFEST);
    let text = fs::read_to_string(&mpath).unwrap();
    let tampered: String = text
        .lines()
        .map(|l| if l.starts_with("content_hash") { "content_hash = 00".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&mpath, tampered).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Corrupt { .. })));
    fs::write(&mpath, &text).unwrap();

    // Modified tensor file.
    let victim = dir.path().join(PATCH_DIR).join("000001_t2.lpt");
    let mut bytes = fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&victim, bytes).unwrap();
    assert!(load_dataset(dir.path()).is_err());

    // Missing tensor file is named in the error.
    fs::remove_file(&victim).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("000001_t2.lpt"), "{err}");
}

#[test]
fn build_is_deterministic() {
    let a = build_dataset(&small_spec(), 21).unwrap();
    let b = build_dataset(&small_spec(), 21).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.patches, b.patches);
    let total: usize = Split::ALL.iter().map(|&s| a.manifest.class_counts(s).iter().sum::<usize>()).sum();
    assert_eq!(total, a.patches.len());
}
