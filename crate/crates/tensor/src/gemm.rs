//! Packed matrix multiply with a fixed reduction order.
//!
//! Every output element is accumulated as `((0 + a0*b0) + a1*b1) + ...` in
//! ascending `k`, exactly as a naive triple loop would. Blocking happens only
//! over `m` and `n`, and across `k` blocks the running sum is carried through
//! the output buffer, so the result is bitwise identical to the naive loop.
//! No fused multiply-add is used.

const MR: usize = 4;
const NR: usize = 8;
const KC: usize = 256;
const NC: usize = 512;

/// Strided read-only matrix view: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        MatRef { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef { data, rs: 1, cs: cols }
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.rs + j * self.cs]
    }
}

/// `c[m x n] (+)= a[m x k] * b[k x n]` with `c` row-major and contiguous.
///
/// With `accumulate == false` the previous contents of `c` are ignored.
pub fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], accumulate: bool) {
    assert!(c.len() >= m * n, "gemm output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }

    let m_panels = m.div_ceil(MR);
    let mut a_pack = vec![0.0; m_panels * MR * KC.min(k)];
    let mut b_pack = vec![0.0; NC.div_ceil(NR) * NR * KC.min(k)];

    for pc in (0..k).step_by(KC) {
        let kc = KC.min(k - pc);
        // carry the running sum through `c` unless this is a fresh first block
        let load = accumulate || pc > 0;
        pack_a(&a, m, pc, kc, &mut a_pack);
        for jc in (0..n).step_by(NC) {
            let nc = NC.min(n - jc);
            pack_b(&b, pc, kc, jc, nc, &mut b_pack);
            for jp in 0..nc.div_ceil(NR) {
                let j0 = jc + jp * NR;
                let nr = NR.min(n - j0);
                let bp = &b_pack[jp * NR * kc..(jp + 1) * NR * kc];
                for ip in 0..m_panels {
                    let i0 = ip * MR;
                    let mr = MR.min(m - i0);
                    let ap = &a_pack[ip * MR * kc..(ip + 1) * MR * kc];
                    let mut acc = [[0.0f64; NR]; MR];
                    if load {
                        for (i, row) in acc.iter_mut().enumerate().take(mr) {
                            let base = (i0 + i) * n + j0;
                            row[..nr].copy_from_slice(&c[base..base + nr]);
                        }
                    }
                    kernel(kc, ap, bp, &mut acc);
                    for (i, row) in acc.iter().enumerate().take(mr) {
                        let base = (i0 + i) * n + j0;
                        c[base..base + nr].copy_from_slice(&row[..nr]);
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn kernel(kc: usize, ap: &[f64], bp: &[f64], acc: &mut [[f64; NR]; MR]) {
    let ap = &ap[..kc * MR];
    let bp = &bp[..kc * NR];
    for (a, b) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)) {
        for i in 0..MR {
            let ai = a[i];
            for j in 0..NR {
                acc[i][j] += ai * b[j];
            }
        }
    }
}

fn pack_a(a: &MatRef<'_>, m: usize, pc: usize, kc: usize, out: &mut [f64]) {
    for ip in 0..m.div_ceil(MR) {
        let panel = &mut out[ip * MR * kc..(ip + 1) * MR * kc];
        for p in 0..kc {
            for i in 0..MR {
                let row = ip * MR + i;
                panel[p * MR + i] = if row < m { a.at(row, pc + p) } else { 0.0 };
            }
        }
    }
}

fn pack_b(b: &MatRef<'_>, pc: usize, kc: usize, jc: usize, nc: usize, out: &mut [f64]) {
    for jp in 0..nc.div_ceil(NR) {
        let panel = &mut out[jp * NR * kc..(jp + 1) * NR * kc];
        for p in 0..kc {
            for j in 0..NR {
                let col = jp * NR + j;
                panel[p * NR + j] = if col < nc { b.at(pc + p, jc + col) } else { 0.0 };
            }
        }
    }
}
