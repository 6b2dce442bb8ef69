//! Raw forward/backward kernels over flat NCHW buffers.

use crate::gemm::{gemm, MatRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.kw) / self.stride + 1
    }

    fn reduction(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

/// Unfolds input patches into a `[C*kh*kw, N*Ho*Wo]` matrix.
fn im2col(g: &ConvGeometry, x: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let np = g.n * p;
    let mut cols = vec![0.0; g.reduction() * np];
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..ho {
                        let y = (oy * g.stride + i) as isize - g.padding as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let src = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                        let out = &mut dst[n * p + oy * wo..n * p + (oy + 1) * wo];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let xx = (ox * g.stride + j) as isize - g.padding as isize;
                            if xx >= 0 && xx < g.w as isize {
                                *o = src[xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(g: &ConvGeometry, cols: &[f64], dx: &mut [f64]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = ho * wo;
    let np = g.n * p;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &mut dx[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oy in 0..ho {
                        let y = (oy * g.stride + i) as isize - g.padding as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let xx = (ox * g.stride + j) as isize - g.padding as isize;
                            if xx >= 0 && xx < g.w as isize {
                                plane[y as usize * g.w + xx as usize] += src[n * p + oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation; output is `[N, K, Ho, Wo]`. The bias is added after the
/// full reduction over `(c, i, j)`.
pub fn conv2d_forward(g: &ConvGeometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let p = g.out_h() * g.out_w();
    let np = g.n * p;
    let r = g.reduction();
    let cols = im2col(g, x);
    let mut tmp = vec![0.0; g.k * np];
    gemm(g.k, r, np, MatRef::row_major(w, r), MatRef::row_major(&cols, np), &mut tmp, false);
    let mut out = vec![0.0; g.n * g.k * p];
    for k in 0..g.k {
        let b = bias.map_or(0.0, |b| b[k]);
        for n in 0..g.n {
            let src = &tmp[k * np + n * p..k * np + (n + 1) * p];
            let dst = &mut out[(n * g.k + k) * p..(n * g.k + k + 1) * p];
            if bias.is_some() {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            } else {
                dst.copy_from_slice(src);
            }
        }
    }
    out
}

pub struct ConvGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub fn conv2d_backward(g: &ConvGeometry, x: &[f64], w: &[f64], dy: &[f64], need_dx: bool) -> ConvGrads {
    let p = g.out_h() * g.out_w();
    let np = g.n * p;
    let r = g.reduction();
    let mut gt = vec![0.0; g.k * np];
    for n in 0..g.n {
        for k in 0..g.k {
            gt[k * np + n * p..k * np + (n + 1) * p].copy_from_slice(&dy[(n * g.k + k) * p..(n * g.k + k + 1) * p]);
        }
    }
    let dbias = gt.chunks_exact(np).map(|row| row.iter().sum()).collect();
    let cols = im2col(g, x);
    let mut dw = vec![0.0; g.k * r];
    gemm(g.k, np, r, MatRef::row_major(&gt, np), MatRef::transposed(&cols, np), &mut dw, false);
    let mut dx = Vec::new();
    if need_dx {
        let mut dcols = cols;
        gemm(r, g.k, np, MatRef::transposed(w, r), MatRef::row_major(&gt, np), &mut dcols, false);
        dx = vec![0.0; g.n * g.c * g.h * g.w];
        col2im(g, &dcols, &mut dx);
    }
    ConvGrads { dx, dw, dbias }
}

/// Max pooling over `[planes, h, w]`. Returns the output and, for each output,
/// the flat input index of the first maximal element in row-major order.
pub fn maxpool2d_forward(planes: usize, h: usize, w: usize, window: usize, stride: usize, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                let mut best_v = x[best];
                for i in 0..window {
                    let row = base + (oy * stride + i) * w + ox * stride;
                    for (j, &v) in x[row..row + window].iter().enumerate() {
                        // strict comparison keeps the first maximum on ties
                        if v > best_v {
                            best_v = v;
                            best = row + j;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Per-channel statistics over `(N, H, W)` for an `[N, C, H*W]` buffer.
pub fn channel_moments(n: usize, c: usize, hw: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for b in 0..n {
            v += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                .iter()
                .map(|&t| (t - mu) * (t - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    (mean, var)
}
