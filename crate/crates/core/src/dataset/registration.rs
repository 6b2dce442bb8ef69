use lpcd_tensor::Tensor;

use super::PatchPair;
use crate::error::{Error, Result};

/// Bilinear resize of `[C, h, w]` to `[C, out, out]` with corner pixels aligned.
pub fn resize_bilinear(t: &Tensor, out: usize) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let scale = |src: usize| if out > 1 { (src - 1) as f64 / (out - 1) as f64 } else { 0.0 };
    let (sy, sx) = (scale(h), scale(w));
    let mut data = Vec::with_capacity(c * out * out);
    for ch in 0..c {
        let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
        for i in 0..out {
            let fy = i as f64 * sy;
            let y0 = (fy.floor() as usize).min(h - 1);
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f64;
            for j in 0..out {
                let fx = j as f64 * sx;
                let x0 = (fx.floor() as usize).min(w - 1);
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f64;
                let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
                let bot = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
                data.push(top * (1.0 - ty) + bot * ty);
            }
        }
    }
    Tensor::new([c, out, out], data).expect("resize shape")
}

/// Simulates a registration error of `e` pixels: the first image keeps its
/// upper-left `(P-e)^2` region, the second its lower-right one, and both are
/// resized back to `P x P`. Label and mask are carried over unchanged.
pub fn apply_registration_error(pair: &PatchPair, e: usize) -> Result<PatchPair> {
    let p = pair.size();
    if e >= p {
        return Err(Error::InvalidArgument(format!("registration error {e} must be smaller than patch size {p}")));
    }
    if e == 0 {
        return Ok(pair.clone());
    }
    let side = p - e;
    let t1 = super::tile::crop(&pair.t1, 0, 0, side);
    let t2 = super::tile::crop(&pair.t2, e, e, side);
    Ok(PatchPair {
        t1: resize_bilinear(&t1, p),
        t2: resize_bilinear(&t2, p),
        ..pair.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_keeps_corners_and_constants() {
        let t = Tensor::from_fn([1, 3, 3], |i| i as f64);
        let r = resize_bilinear(&t, 5);
        assert_eq!(r.data()[0], 0.0);
        assert_eq!(r.data()[24], 8.0);
        assert_eq!(r.data()[12], 4.0);
        let c = resize_bilinear(&Tensor::full([2, 4, 4], 0.25), 7);
        assert!(c.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
