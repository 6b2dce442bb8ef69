//! Stochastic gradient descent with classical momentum.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// One in-place update: `v <- momentum * v + g`, then `p <- p - lr * v`.
///
/// No weight decay is applied.
pub fn sgd_momentum_step(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, lr: f64, momentum: f64) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "sgd_momentum_step",
            lhs: param.shape().to_vec(),
            rhs: if param.shape() != grad.shape() {
                grad.shape().to_vec()
            } else {
                velocity.shape().to_vec()
            },
        });
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TensorError::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(TensorError::InvalidArgument(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = Tensor::new([2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::new([2], vec![0.5, 2.0]).unwrap();
        let mut v = Tensor::zeros([2]);
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.1 * 0.5, -1.0 - 0.1 * 2.0]);
    }

    #[test]
    fn two_constant_steps_unroll_to_closed_form() {
        // displacement after two steps: lr*g + lr*(m*g + g) = lr*g*(2 + m)
        let (lr, m, g0) = (0.05, 0.9, 1.5);
        let mut p = Tensor::zeros([1]);
        let g = Tensor::full([1], g0);
        let mut v = Tensor::zeros([1]);
        sgd_momentum_step(&mut p, &g, &mut v, lr, m).unwrap();
        sgd_momentum_step(&mut p, &g, &mut v, lr, m).unwrap();
        assert!((-p.data()[0] - lr * g0 * (2.0 + m)).abs() < 1e-15);
    }

    #[test]
    fn velocity_persists_without_gradient() {
        let mut p = Tensor::zeros([1]);
        let mut v = Tensor::full([1], 2.0);
        sgd_momentum_step(&mut p, &Tensor::zeros([1]), &mut v, 0.1, 0.99).unwrap();
        assert!((p.data()[0] + 0.1 * 0.99 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut p = Tensor::zeros([2]);
        let mut v = Tensor::zeros([2]);
        assert!(sgd_momentum_step(&mut p, &Tensor::zeros([3]), &mut v, 0.1, 0.9).is_err());
        assert!(sgd_momentum_step(&mut p, &Tensor::zeros([2]), &mut v, 0.0, 0.9).is_err());
        assert!(sgd_momentum_step(&mut p, &Tensor::zeros([2]), &mut v, 0.1, 1.0).is_err());
    }
}
