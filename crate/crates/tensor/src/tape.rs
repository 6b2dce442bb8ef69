//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to apply its gradient rule. Nodes only reference earlier nodes, so
//! the tape is topologically ordered by construction and `backward` walks it
//! once in reverse.

use crate::error::{Result, TensorError};
use crate::gemm::{gemm, MatRef};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the batch's own statistics.
    Train { eps: f64 },
    /// Normalize with externally tracked running statistics.
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
        eps: f64,
    },
}

/// Batch statistics observed by a training-mode batch norm. `var` is biased.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Relu { x: Var },
    Add { a: Var, b: Var },
    AbsDiff { a: Var, b: Var },
    Reshape { x: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    WeightedNll { x: Var, labels: Vec<usize>, weights: Vec<f64> },
    Sum { x: Var },
    Scale { x: Var, factor: f64 },
    Mul { a: Var, b: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, addressable by leaf handle.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf created with `requires_grad`. Leaves that the loss
    /// does not depend on get an all-zero gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, t: &Tensor, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidShape {
        op,
        shape: t.shape().to_vec(),
        reason: reason.into(),
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Shorthand for a leaf that does not require a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xt = self.value(x);
        let wt = self.value(w);
        let [n, c, h, wd] = xt.dims4("conv2d")?;
        let [k, wc, kh, kw] = wt.dims4("conv2d")?;
        if wc != c {
            return Err(mismatch("conv2d", xt, wt));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument("conv2d: stride must be positive".into()));
        }
        if kh > h + 2 * padding || kw > wd + 2 * padding {
            return Err(mismatch("conv2d", xt, wt));
        }
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.shape() != [k] {
                return Err(mismatch("conv2d bias", wt, bt));
            }
        }
        let geom = ConvGeometry {
            n,
            c,
            h,
            w: wd,
            k,
            kh,
            kw,
            stride,
            padding,
        };
        let out = kernels::conv2d_forward(&geom, xt.data(), wt.data(), b.map(|b| self.value(b).data()));
        let value = Tensor::new([n, k, geom.out_h(), geom.out_w()], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xt = self.value(x);
        let [n, c, h, w] = xt.dims4("maxpool2d")?;
        if window == 0 || stride == 0 {
            return Err(TensorError::InvalidArgument("maxpool2d: window and stride must be positive".into()));
        }
        if window > h || window > w {
            return Err(invalid("maxpool2d", xt, format!("window {window} exceeds spatial size")));
        }
        let (out, argmax) = kernels::maxpool2d_forward(n * c, h, w, window, stride, xt.data());
        let value = Tensor::new([n, c, (h - window) / stride + 1, (w - window) / stride + 1], out)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(xt.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch("add", at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch("mul", at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch("abs_diff", at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| (x - y).abs()).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AbsDiff { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xt = self.value(x);
        let value = Tensor::new(xt.shape().to_vec(), xt.data().iter().map(|v| v * factor).collect()).expect("same shape");
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Flattens everything but the leading (batch) dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        if shape.is_empty() {
            return self.reshape(x, &[1]);
        }
        let rest = shape[1..].iter().product();
        let n = shape[0];
        self.reshape(x, &[n, rest])
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .map(|&v| self.value(v))
            .ok_or_else(|| TensorError::InvalidArgument("concat: no inputs".into()))?;
        if axis >= first.rank() {
            return Err(invalid("concat", first, format!("axis {axis} out of range")));
        }
        let mut shape = first.shape().to_vec();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            let same_rest = t.rank() == first.rank()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(mismatch("concat", first, t));
            }
            total += t.shape()[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    /// The slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        if axis >= xt.rank() || len == 0 || start + len > xt.shape()[axis] {
            return Err(invalid("narrow", xt, format!("range {start}..{} on axis {axis}", start + len)));
        }
        let (outer, dim, inner) = split_axis(xt.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&xt.data()[base..base + len * inner]);
        }
        let mut shape = xt.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }, &[x]))
    }

    /// `x[N, in] * w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        let (n, fin) = match xt.shape() {
            &[n, f] => (n, f),
            _ => return Err(invalid("linear", xt, "expected rank 2 (N, features)")),
        };
        let fout = match wt.shape() {
            &[o, i] if i == fin => o,
            _ => return Err(mismatch("linear", xt, wt)),
        };
        let mut out = vec![0.0; n * fout];
        gemm(n, fin, fout, MatRef::row_major(xt.data(), fin), MatRef::transposed(wt.data(), fin), &mut out, false);
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.shape() != [fout] {
                return Err(mismatch("linear bias", wt, bt));
            }
            for row in out.chunks_exact_mut(fout) {
                for (o, bias) in row.iter_mut().zip(bt.data()) {
                    *o += bias;
                }
            }
        }
        let value = Tensor::new([n, fout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    fn last_dim(&self, x: Var, op: &'static str) -> Result<usize> {
        let xt = self.value(x);
        xt.shape()
            .last()
            .copied()
            .ok_or_else(|| invalid(op, xt, "needs at least one dimension"))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let d = self.last_dim(x, "softmax")?;
        let xt = self.value(x);
        let mut data = xt.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Softmax { x }, &[x]))
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let d = self.last_dim(x, "log_softmax")?;
        let xt = self.value(x);
        let mut data = xt.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(value, Op::LogSoftmax { x }, &[x]))
    }

    /// `-(1/N) * sum_k weights[labels[k]] * x[k, labels[k]]` for log-probabilities `x[N, K]`.
    pub fn weighted_nll(&mut self, x: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let xt = self.value(x);
        let (n, k) = match xt.shape() {
            &[n, k] => (n, k),
            _ => return Err(invalid("weighted_nll", xt, "expected rank 2 (N, classes)")),
        };
        if labels.len() != n {
            return Err(TensorError::InvalidArgument(format!(
                "weighted_nll: {} labels for batch of {n}",
                labels.len()
            )));
        }
        if weights.len() != k {
            return Err(TensorError::InvalidArgument(format!(
                "weighted_nll: {} weights for {k} classes",
                weights.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(TensorError::InvalidArgument(format!("weighted_nll: label {bad} outside 0..{k}")));
        }
        let mut s = 0.0;
        for (row, &y) in xt.data().chunks_exact(k).zip(labels) {
            s += weights[y] * row[y];
        }
        let value = Tensor::scalar(-s / n as f64);
        Ok(self.push(
            value,
            Op::WeightedNll {
                x,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::Sum { x }, &[x])
    }

    /// Per-channel batch normalization of an `[N, C, H, W]` input.
    ///
    /// In training mode the returned statistics are the batch's own; the
    /// caller folds them into whatever running averages it keeps.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_>) -> Result<(Var, Option<BatchStats>)> {
        let xt = self.value(x);
        let [n, c, h, w] = xt.dims4("batch_norm")?;
        for p in [gamma, beta] {
            let pt = self.value(p);
            if pt.shape() != [c] {
                return Err(mismatch("batch_norm", xt, pt));
            }
        }
        let hw = h * w;
        let (mean, var, eps, train) = match mode {
            BatchNormMode::Train { eps } => {
                let (m, v) = kernels::channel_moments(n, c, hw, xt.data());
                (m, v, eps, true)
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(TensorError::InvalidArgument(format!(
                        "batch_norm: running statistics of length {} / {} for {c} channels",
                        running_mean.len(),
                        running_var.len()
                    )));
                }
                (running_mean.to_vec(), running_var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xt.numel()];
        let mut out = vec![0.0; xt.numel()];
        for bi in 0..n {
            for ch in 0..c {
                let range = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                for i in range {
                    let xh = (xt.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        let stats = train.then(|| BatchStats {
            mean,
            var,
            count: n * hw,
        });
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        );
        Ok((v, stats))
    }

    /// Backpropagates from a scalar `loss` to every leaf created with `requires_grad`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let seed = self.value(loss);
        if seed.numel() != 1 {
            return Err(TensorError::NonScalarSeed(seed.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                    return None;
                }
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape matches value"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut accumulate = |v: Var, contrib: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        };

        match &node.op {
            Op::Leaf => unreachable!("leaves are handled by the caller"),
            Op::Conv2d { x, w, b, geom } => {
                let cg = kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), g, self.wants(*x));
                if self.wants(*x) {
                    accumulate(*x, cg.dx);
                }
                if self.wants(*w) {
                    accumulate(*w, cg.dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        accumulate(*b, cg.dbias);
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (&src, gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                accumulate(*x, dx);
            }
            Op::Relu { x } => {
                let dx = self.value(*x).data().iter().zip(g).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect();
                accumulate(*x, dx);
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(*a, g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(*b, g.to_vec());
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    accumulate(*a, g.iter().zip(bv).map(|(gv, y)| gv * y).collect());
                }
                if self.wants(*b) {
                    accumulate(*b, g.iter().zip(av).map(|(gv, x)| gv * x).collect());
                }
            }
            Op::AbsDiff { a, b } => {
                // subgradient 0 where the inputs coincide
                let sign: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .zip(g)
                    .map(|((x, y), gv)| match x.partial_cmp(y) {
                        Some(std::cmp::Ordering::Greater) => *gv,
                        Some(std::cmp::Ordering::Less) => -gv,
                        _ => 0.0,
                    })
                    .collect();
                if self.wants(*b) {
                    accumulate(*b, sign.iter().map(|s| -s).collect());
                }
                if self.wants(*a) {
                    accumulate(*a, sign);
                }
            }
            Op::Scale { x, factor } => accumulate(*x, g.iter().map(|v| v * factor).collect()),
            Op::Reshape { x } => accumulate(*x, g.to_vec()),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + len * inner]);
                        }
                        accumulate(p, d);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xt = self.value(*x);
                let (outer, dim, inner) = split_axis(xt.shape(), *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; xt.numel()];
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    dx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(*x, dx);
            }
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, fin) = (xt.shape()[0], xt.shape()[1]);
                let fout = wt.shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * fin];
                    gemm(n, fout, fin, MatRef::row_major(g, fout), MatRef::row_major(wt.data(), fin), &mut dx, false);
                    accumulate(*x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; fout * fin];
                    gemm(fout, n, fin, MatRef::transposed(g, fout), MatRef::row_major(xt.data(), fin), &mut dw, false);
                    accumulate(*w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![0.0; fout];
                        for row in g.chunks_exact(fout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(*b, db);
                    }
                }
            }
            Op::Softmax { x } => {
                let d = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; g.len()];
                for ((y, gr), out) in node.value.data().chunks_exact(d).zip(g.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..d {
                        out[i] = y[i] * (gr[i] - dot);
                    }
                }
                accumulate(*x, dx);
            }
            Op::LogSoftmax { x } => {
                let d = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; g.len()];
                for ((y, gr), out) in node.value.data().chunks_exact(d).zip(g.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
                    let s: f64 = gr.iter().sum();
                    for i in 0..d {
                        out[i] = gr[i] - y[i].exp() * s;
                    }
                }
                accumulate(*x, dx);
            }
            Op::WeightedNll { x, labels, weights } => {
                let xt = self.value(*x);
                let k = xt.shape()[1];
                let n = labels.len() as f64;
                let mut dx = vec![0.0; xt.numel()];
                for (i, &y) in labels.iter().enumerate() {
                    dx[i * k + y] = -g[0] * weights[y] / n;
                }
                accumulate(*x, dx);
            }
            Op::Sum { x } => accumulate(*x, vec![g[0]; self.value(*x).numel()]),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let [n, c, h, w] = self.value(*x).dims4("batch_norm").expect("validated in forward");
                let hw = h * w;
                let m = (n * hw) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..n {
                    for ch in 0..c {
                        let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                        for i in r {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for bi in 0..n {
                        for ch in 0..c {
                            let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                            for i in r {
                                dx[i] = if *train {
                                    gam[ch] * inv_std[ch] / m * (m * g[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                                } else {
                                    gam[ch] * inv_std[ch] * g[i]
                                };
                            }
                        }
                    }
                    accumulate(*x, dx);
                }
                if self.wants(*gamma) {
                    accumulate(*gamma, dgamma);
                }
                if self.wants(*beta) {
                    accumulate(*beta, dbeta);
                }
            }
        }
    }
}
