use lpcd_core::metrics::{
    bin_index, class_weights, jsd, kld, metrics, probability_histograms, wce_loss, ClassWeights, ConfusionCounts,
};
use lpcd_core::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn worked_example() {
    let r = metrics(ConfusionCounts { tp: 90, tn: 70, fp: 30, fn_: 10 }, 6.0).unwrap();
    assert_eq!(r.recall_pos, Some(0.9));
    assert_eq!(r.recall_neg, Some(0.7));
    assert_eq!(r.precision_pos, Some(0.75));
    assert!(close(r.f_beta.unwrap(), 0.875, 1e-12));
    assert!(close(r.patch_acc.unwrap(), 0.86471, 1e-5));
    assert!(close(r.mcc.unwrap(), 0.61237, 1e-5));
}

#[test]
fn perfect_classifier_and_f1() {
    let r = metrics(ConfusionCounts { tp: 12, tn: 30, fp: 0, fn_: 0 }, 4.5).unwrap();
    for v in [r.recall_pos, r.recall_neg, r.precision_pos, r.f_beta, r.patch_acc, r.mcc] {
        assert_eq!(v, Some(1.0));
    }
    let r = metrics(ConfusionCounts { tp: 8, tn: 5, fp: 4, fn_: 2 }, 1.0).unwrap();
    let (p, q) = (r.precision_pos.unwrap(), r.recall_pos.unwrap());
    assert!(close(r.f_beta.unwrap(), 2.0 * p * q / (p + q), 1e-15));
}

/// Literal per-sample tally and formulas, kept independent of the library.
fn oracle(pred: &[bool], truth: &[bool], beta: f64) -> [Option<f64>; 6] {
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&p, &t) in pred.iter().zip(truth) {
        if p && t {
            tp += 1.0;
        } else if !p && !t {
            tn += 1.0;
        } else if p {
            fp += 1.0;
        } else {
            fn_ += 1.0;
        }
    }
    let div = |a: f64, b: f64| if b == 0.0 { None } else { Some(a / b) };
    let rp = div(tp, tp + fn_);
    let rn = div(tn, tn + fp);
    let pp = div(tp, tp + fp);
    let harm = |a: Option<f64>, b: Option<f64>| Some((beta + 1.0) / (beta / a? + 1.0 / b?));
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if den == 0.0 { None } else { Some((tp * tn - fp * fn_) / den.sqrt()) };
    [rp, rn, pp, harm(rp, pp), harm(rp, rn), mcc]
}

#[test]
fn brute_force_oracle_over_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.gen_range(1..200);
        let bias = rng.gen_range(0.0..1.0);
        let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(bias)).collect();
        let pred: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let beta = [1.0, 4.5, 6.0][rng.gen_range(0..3)];
        let counts = ConfusionCounts::tally(
            &pred.iter().map(|&b| b as u8).collect::<Vec<_>>(),
            &truth.iter().map(|&b| b as u8).collect::<Vec<_>>(),
        )
        .unwrap();
        let r = metrics(counts, beta).unwrap();
        let got = [r.recall_pos, r.recall_neg, r.precision_pos, r.f_beta, r.patch_acc, r.mcc];
        assert_eq!(got, oracle(&pred, &truth, beta));
    }
}

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..500, 0u64..500, 0u64..500, 0u64..500)
        .prop_filter("nonempty", |c| c.0 + c.1 + c.2 + c.3 > 0)
        .prop_map(|(tp, tn, fp, fn_)| ConfusionCounts { tp, tn, fp, fn_ })
}

proptest! {
    #[test]
    fn reports_stay_in_range(c in counts(), beta in 0.1f64..10.0) {
        let r = metrics(c, beta).unwrap();
        for v in [r.recall_pos, r.recall_neg, r.precision_pos, r.f_beta, r.patch_acc].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let Some(m) = r.mcc {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&m));
        }
        if let (Some(a), Some(b), Some(f)) = (r.recall_pos, r.precision_pos, r.f_beta) {
            prop_assert!(f >= a.min(b) - 1e-12 && f <= a.max(b) + 1e-12);
        }
        if let (Some(a), Some(b), Some(f)) = (r.recall_pos, r.recall_neg, r.patch_acc) {
            prop_assert!(f >= a.min(b) - 1e-12 && f <= a.max(b) + 1e-12);
        }
    }

    #[test]
    fn mcc_swaps(c in counts()) {
        let base = metrics(c, 1.0).unwrap().mcc;
        let classes = metrics(ConfusionCounts { tp: c.tn, tn: c.tp, fp: c.fn_, fn_: c.fp }, 1.0).unwrap().mcc;
        let preds = metrics(ConfusionCounts { tp: c.fp, tn: c.fn_, fp: c.tp, fn_: c.tn }, 1.0).unwrap().mcc;
        match base {
            None => prop_assert!(classes.is_none() && preds.is_none()),
            Some(m) => {
                prop_assert!((classes.unwrap() - m).abs() < 1e-12);
                prop_assert!((preds.unwrap() + m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergences_are_well_behaved(raw in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 2..20)) {
        let sp: f64 = raw.iter().map(|r| r.0).sum();
        let sq: f64 = raw.iter().map(|r| r.1).sum();
        let p: Vec<f64> = raw.iter().map(|r| r.0 / sp).collect();
        let q: Vec<f64> = raw.iter().map(|r| r.1 / sq).collect();
        prop_assert!((jsd(&p, &q).unwrap() - jsd(&q, &p).unwrap()).abs() <= 1e-12);
        prop_assert!(kld(&p, &q).unwrap() >= 0.0);
        prop_assert!((0.0..=1.0).contains(&jsd(&p, &q).unwrap()));
        prop_assert_eq!(kld(&p, &p).unwrap(), 0.0);
        if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-6) {
            prop_assert!(kld(&p, &q).unwrap() > 0.0);
        }
    }

    #[test]
    fn balanced_weights_halve_cross_entropy(vals in prop::collection::vec(-5.0f64..5.0, 2..16), seed in 0u64..1000) {
        let n = vals.len() / 2;
        prop_assume!(n >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let logits = Tensor::new([n, 2], vals[..2 * n].to_vec()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(logits.clone());
        let l = wce_loss(&mut tape, x, &labels, ClassWeights::balanced()).unwrap();
        let mut ce = 0.0;
        for (row, &y) in logits.data().chunks(2).zip(&labels) {
            let m = row[0].max(row[1]);
            let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
            ce += lse - row[y as usize];
        }
        ce /= n as f64;
        prop_assert!((tape.value(l).item().unwrap() - 0.5 * ce).abs() <= 1e-12 * ce.max(1.0));
    }
}

#[test]
fn weighted_loss_closed_form_and_limit() {
    let w = ClassWeights::new(0.15, 0.85).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new([2, 2], vec![0.3, 0.3, -1.0, -1.0]).unwrap());
    let l = wce_loss(&mut tape, x, &[1, 0], w).unwrap();
    assert!(close(tape.value(l).item().unwrap(), 0.34657, 1e-5));
    assert!(close(tape.value(l).item().unwrap(), 0.5 * std::f64::consts::LN_2, 1e-15));

    let mut prev = f64::INFINITY;
    for margin in [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([1, 2], vec![0.0, margin]).unwrap());
        let l = wce_loss(&mut tape, x, &[1], w).unwrap();
        let l = tape.value(l).item().unwrap();
        assert!(l < prev && l >= 0.0);
        prev = l;
    }
    assert!(prev < 1e-15);
}

#[test]
fn weighted_loss_gradient_matches_differences() {
    let w = ClassWeights::new(0.3, 0.7).unwrap();
    let labels = [0u8, 1, 1];
    let x0 = Tensor::new([3, 2], vec![0.2, -0.4, 1.1, 0.3, -0.7, 0.9]).unwrap();
    let loss = |t: &Tensor| {
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        let l = wce_loss(&mut tape, x, &labels, w).unwrap();
        tape.value(l).item().unwrap()
    };
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let l = wce_loss(&mut tape, x, &labels, w).unwrap();
    let g = tape.backward(l).unwrap().get(x).unwrap().clone();
    let h = 1e-6;
    for j in 0..6 {
        let mut p = x0.clone();
        p.data_mut()[j] += h;
        let mut m = x0.clone();
        m.data_mut()[j] -= h;
        let num = (loss(&p) - loss(&m)) / (2.0 * h);
        assert!((num - g.data()[j]).abs() <= 1e-4 * num.abs().max(1e-3), "{j}: {num} vs {}", g.data()[j]);
    }
}

#[test]
fn class_weight_rule() {
    assert_eq!(class_weights(15, 100).unwrap(), ClassWeights { w0: 0.15, w1: 0.85 });
    assert_eq!(class_weights(50, 100).unwrap(), ClassWeights::balanced());
    assert!(class_weights(0, 5).is_err() && class_weights(5, 5).is_err());
}

#[test]
fn divergence_closed_forms() {
    assert!(close(kld(&[0.5, 0.5], &[0.25, 0.75]).unwrap(), 0.20752, 1e-5));
    assert_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert_eq!(jsd(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
    assert!(kld(&[0.5, 0.5], &[1.0, 0.0]).is_err());
}

#[test]
fn histograms_match_brute_force_binning() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bins = 50;
    let eps = 1e-10;
    let probs: Vec<f64> = (0..100).map(|i| if i == 0 { 1.0 } else { rng.gen_range(0.0..1.0) }).collect();
    let labels: Vec<u8> = (0..100).map(|i| (i % 3 == 0) as u8).collect();
    let (p, q) = probability_histograms(&probs, &labels, bins, eps).unwrap();

    for (class, hist) in [(1u8, &p), (0u8, &q)] {
        let mut raw = vec![0.0; bins];
        for (&x, &y) in probs.iter().zip(&labels) {
            if y == class {
                let b = (0..bins).find(|&b| x < (b + 1) as f64 / bins as f64).unwrap_or(bins - 1);
                raw[b] += 1.0;
            }
        }
        let floored: Vec<f64> = raw.iter().map(|&c: &f64| c.max(eps)).collect();
        let total: f64 = floored.iter().sum();
        for (h, f) in hist.iter().zip(&floored) {
            assert!(close(*h, f / total, 1e-15));
        }
        assert!(close(hist.iter().sum::<f64>(), 1.0, 1e-12));
    }
    assert_eq!(bin_index(1.0, bins), bins - 1);
    assert_eq!(bin_index(0.0, bins), 0);
}
