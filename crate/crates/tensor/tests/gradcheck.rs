//! Analytic gradients against central finite differences (h = 1e-5).

use lpcd_tensor::{BatchNormMode, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn eval<F: Fn(&mut Tape, &[Var]) -> Var>(inputs: &[Tensor], f: &F) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item().unwrap()
}

/// Norm-wise relative error per input between the tape gradient and central differences.
fn check<F: Fn(&mut Tape, &[Var]) -> Var>(name: &str, inputs: Vec<Tensor>, f: F) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).unwrap();
        let mut numeric = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            numeric.push((eval(&plus, &f) - eval(&minus, &f)) / (2.0 * H));
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if na.max(nn) == 0.0 { 0.0 } else { diff / na.max(nn) };
        assert!(rel < TOL, "{name}: input {i} relative error {rel:e}");
    }
}

/// Reduces an arbitrary-shaped output to a scalar through a fixed random projection.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(&mut rng, tape.value(y).shape());
    let r = tape.constant(r);
    let p = tape.mul(y, r).unwrap();
    tape.sum(p)
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(stride, pad, k) in &[(1, 0, 3), (2, 1, 3), (1, 1, 1), (2, 0, 2)] {
        let inputs = vec![random(&mut rng, &[2, 3, 5, 6]), random(&mut rng, &[4, 3, k, k]), random(&mut rng, &[4])];
        check("conv2d", inputs, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            project(t, y, 1)
        });
    }
}

#[test]
fn maxpool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = vec![random(&mut rng, &[2, 2, 6, 6])];
    check("maxpool2d", inputs.clone(), |t, v| {
        let y = t.maxpool2d(v[0], 2, 2).unwrap();
        project(t, y, 2)
    });
    check("maxpool2d overlapping", inputs, |t, v| {
        let y = t.maxpool2d(v[0], 3, 1).unwrap();
        project(t, y, 3)
    });
}

#[test]
fn maxpool_tie_routes_to_first_maximum() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new([1, 1, 2, 2], vec![1.0, 1.0, 1.0, 0.0]).unwrap(), true);
    let y = tape.maxpool2d(x, 2, 2).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[3, 4]);
    check("relu", vec![a.clone()], |t, v| {
        let y = t.relu(v[0]);
        project(t, y, 4)
    });
    check("add", vec![a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        project(t, y, 5)
    });
    check("mul", vec![a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        project(t, y, 5)
    });
    check("abs_diff", vec![a.clone(), b.clone()], |t, v| {
        let y = t.abs_diff(v[0], v[1]).unwrap();
        project(t, y, 6)
    });
    check("scale", vec![a.clone()], |t, v| {
        let y = t.scale(v[0], -2.5);
        project(t, y, 7)
    });
    check("softmax", vec![a.clone()], |t, v| {
        let y = t.softmax(v[0]).unwrap();
        project(t, y, 8)
    });
    check("log_softmax", vec![a.clone()], |t, v| {
        let y = t.log_softmax(v[0]).unwrap();
        project(t, y, 9)
    });
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&mut rng, &[2, 3, 2, 2]);
    check("flatten", vec![x.clone()], |t, v| {
        let y = t.flatten(v[0]).unwrap();
        project(t, y, 10)
    });
    check("concat axis 1", vec![random(&mut rng, &[2, 3]), random(&mut rng, &[2, 5])], |t, v| {
        let y = t.concat(&[v[0], v[1]], 1).unwrap();
        project(t, y, 11)
    });
    check("concat axis 0", vec![random(&mut rng, &[1, 3, 2]), random(&mut rng, &[2, 3, 2])], |t, v| {
        let y = t.concat(&[v[0], v[1]], 0).unwrap();
        project(t, y, 12)
    });
    check("narrow", vec![x], |t, v| {
        let y = t.narrow(v[0], 1, 1, 2).unwrap();
        project(t, y, 13)
    });
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let inputs = vec![random(&mut rng, &[3, 5]), random(&mut rng, &[4, 5]), random(&mut rng, &[4])];
    check("linear", inputs, |t, v| {
        let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
        project(t, y, 14)
    });
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let inputs = vec![random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[2]), random(&mut rng, &[2])];
    check("batch_norm train", inputs.clone(), |t, v| {
        let (y, _) = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train { eps: 1e-5 }).unwrap();
        project(t, y, 15)
    });
    check("batch_norm eval", inputs, |t, v| {
        let (y, _) = t
            .batch_norm(v[0], v[1], v[2], BatchNormMode::Eval {
                running_mean: &[0.1, -0.2],
                running_var: &[0.5, 2.0],
                eps: 1e-5,
            })
            .unwrap();
        project(t, y, 16)
    });
}

#[test]
fn weighted_nll_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    check("log_softmax + weighted_nll", vec![random(&mut rng, &[5, 2])], |t, v| {
        let lp = t.log_softmax(v[0]).unwrap();
        t.weighted_nll(lp, &[0, 1, 1, 0, 1], &[0.15, 0.85]).unwrap()
    });
}

#[test]
fn composed_small_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let inputs = vec![
        random(&mut rng, &[2, 2, 6, 6]),
        random(&mut rng, &[3, 2, 3, 3]),
        random(&mut rng, &[3]),
        random(&mut rng, &[3]),
        random(&mut rng, &[2, 12]),
        random(&mut rng, &[2]),
    ];
    check("conv-bn-relu-pool-linear", inputs, |t, v| {
        let c = t.conv2d(v[0], v[1], None, 1, 1).unwrap();
        let (b, _) = t.batch_norm(c, v[2], v[3], BatchNormMode::Train { eps: 1e-5 }).unwrap();
        let r = t.relu(b);
        let p = t.maxpool2d(r, 3, 3).unwrap();
        let f = t.flatten(p).unwrap();
        let l = t.linear(f, v[4], Some(v[5])).unwrap();
        let lp = t.log_softmax(l).unwrap();
        t.weighted_nll(lp, &[1, 0], &[0.3, 0.7]).unwrap()
    });
}

#[test]
fn sum_gives_all_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn([2, 3], |i| i as f64), true);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([2], 1.0), true);
    let unused = tape.leaf(Tensor::full([3], 1.0), true);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn non_scalar_seed_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([2], 1.0), true);
    let y = tape.relu(x);
    assert!(tape.backward(y).is_err());
}
