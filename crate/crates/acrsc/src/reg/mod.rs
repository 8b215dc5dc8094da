//! Convex regularizers behind one interface.
//!
//! The learned input-convex network lives in [`icnn`]; the analytic
//! quadratic and the smoothed total-variation baseline share the same
//! [`Regularizer`] trait so the variational solvers and the rate sweep are
//! generic over the penalty.

pub mod checkpoint;
pub mod icnn;

pub use icnn::{
    input_grad_vjp, project_feasible, psi_forward, psi_input_grad, psi_param_grad,
    psi_value_and_grads, Activation, IcnnArch, IcnnParams, IcnnRegularizer, LayerKind, ParamSet,
};

use crate::tensor::ImageTensor;

/// A convex, differentiable penalty on images.
///
/// Implementations must be convex with a monotone gradient; shape handling
/// is the caller's contract (solvers validate once at entry).
pub trait Regularizer {
    fn value(&self, x: &ImageTensor) -> f64;
    fn input_grad(&self, x: &ImageTensor) -> ImageTensor;
    fn kind(&self) -> &'static str;
}

/// `psi(x) = 0`: turns the variational problem into plain least squares.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRegularizer;

impl Regularizer for ZeroRegularizer {
    fn value(&self, _x: &ImageTensor) -> f64 {
        0.0
    }

    fn input_grad(&self, x: &ImageTensor) -> ImageTensor {
        ImageTensor::zeros(x.shape())
    }

    fn kind(&self) -> &'static str {
        "zero"
    }
}

/// `psi(x) = ||x||^2 / 2`, the analytic oracle for the rate theorem.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticTestRegularizer;

impl Regularizer for QuadraticTestRegularizer {
    fn value(&self, x: &ImageTensor) -> f64 {
        0.5 * x.norm_sq()
    }

    fn input_grad(&self, x: &ImageTensor) -> ImageTensor {
        x.clone()
    }

    fn kind(&self) -> &'static str {
        "quadratic"
    }
}

/// Smoothed (Huber) total variation over right/down neighbor differences.
#[derive(Debug, Clone, Copy)]
pub struct HuberTvRegularizer {
    mu: f64,
}

impl HuberTvRegularizer {
    pub fn new(mu: f64) -> crate::Result<Self> {
        if !(mu > 0.0) {
            return Err(crate::Error::invalid(format!(
                "huber threshold must be positive, got {mu}"
            )));
        }
        Ok(HuberTvRegularizer { mu })
    }

    fn huber(&self, d: f64) -> f64 {
        let a = d.abs();
        if a <= self.mu {
            d * d / (2.0 * self.mu)
        } else {
            a - self.mu / 2.0
        }
    }

    fn huber_prime(&self, d: f64) -> f64 {
        (d / self.mu).clamp(-1.0, 1.0)
    }
}

impl Regularizer for HuberTvRegularizer {
    fn value(&self, x: &ImageTensor) -> f64 {
        assert_eq!(x.shape().len(), 2, "huber tv expects 2-D images");
        let (h, w) = (x.rows(), x.cols());
        let mut total = 0.0;
        for r in 0..h {
            for c in 0..w {
                if c + 1 < w {
                    total += self.huber(x.at2(r, c + 1) - x.at2(r, c));
                }
                if r + 1 < h {
                    total += self.huber(x.at2(r + 1, c) - x.at2(r, c));
                }
            }
        }
        total
    }

    fn input_grad(&self, x: &ImageTensor) -> ImageTensor {
        assert_eq!(x.shape().len(), 2, "huber tv expects 2-D images");
        let (h, w) = (x.rows(), x.cols());
        let mut g = ImageTensor::zeros(x.shape());
        for r in 0..h {
            for c in 0..w {
                if c + 1 < w {
                    let d = self.huber_prime(x.at2(r, c + 1) - x.at2(r, c));
                    g.set2(r, c + 1, g.at2(r, c + 1) + d);
                    g.set2(r, c, g.at2(r, c) - d);
                }
                if r + 1 < h {
                    let d = self.huber_prime(x.at2(r + 1, c) - x.at2(r, c));
                    g.set2(r + 1, c, g.at2(r + 1, c) + d);
                    g.set2(r, c, g.at2(r, c) - d);
                }
            }
        }
        g
    }

    fn kind(&self) -> &'static str {
        "huber_tv"
    }
}

/// Bregman distance `psi(x1) - psi(x2) - <grad psi(x2), x1 - x2>`.
///
/// With the smooth regularizers used here the subdifferential is the
/// gradient singleton, so the distance is single-valued and nonnegative for
/// convex `psi`.
pub fn bregman_distance<R: Regularizer + ?Sized>(
    reg: &R,
    x1: &ImageTensor,
    x2: &ImageTensor,
) -> f64 {
    let g2 = reg.input_grad(x2);
    reg.value(x1) - reg.value(x2) - g2.dot(&x1.sub(x2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_noise, RngStream};

    #[test]
    fn quadratic_gradient_is_identity() {
        let mut rng = RngStream::new(4);
        let x = gaussian_noise(&[6, 6], 1.0, &mut rng).unwrap();
        let reg = QuadraticTestRegularizer;
        assert_eq!(reg.input_grad(&x).data(), x.data());
        assert!((reg.value(&x) - 0.5 * x.norm_sq()).abs() < 1e-15);
    }

    #[test]
    fn bregman_identity_case_is_zero() {
        let mut rng = RngStream::new(5);
        let x = gaussian_noise(&[5, 5], 1.0, &mut rng).unwrap();
        assert_eq!(bregman_distance(&QuadraticTestRegularizer, &x, &x), 0.0);
    }

    #[test]
    fn bregman_quadratic_is_half_squared_distance() {
        let mut rng = RngStream::new(6);
        let x1 = gaussian_noise(&[5, 5], 1.0, &mut rng).unwrap();
        let x2 = gaussian_noise(&[5, 5], 1.0, &mut rng).unwrap();
        let d = bregman_distance(&QuadraticTestRegularizer, &x1, &x2);
        let expected = 0.5 * x1.sub(&x2).norm_sq();
        assert!((d - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn huber_tv_zero_on_constant_images() {
        let x = ImageTensor::constant(&[7, 9], 0.42);
        let reg = HuberTvRegularizer::new(0.01).unwrap();
        assert_eq!(reg.value(&x), 0.0);
        assert!(reg.input_grad(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn huber_tv_gradient_matches_finite_differences() {
        let reg = HuberTvRegularizer::new(0.05).unwrap();
        let mut rng = RngStream::new(7);
        let x = gaussian_noise(&[6, 6], 0.5, &mut rng).unwrap();
        let g = reg.input_grad(&x);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (reg.value(&xp) - reg.value(&xm)) / (2.0 * h);
            assert!(
                (fd - g.data()[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "entry {i}: fd {fd} vs grad {}",
                g.data()[i]
            );
        }
    }

    #[test]
    fn huber_tv_convex_midpoints() {
        let reg = HuberTvRegularizer::new(0.05).unwrap();
        let mut rng = RngStream::new(8);
        for _ in 0..200 {
            let x1 = gaussian_noise(&[6, 6], 1.0, &mut rng).unwrap();
            let x2 = gaussian_noise(&[6, 6], 1.0, &mut rng).unwrap();
            let alpha = rng.uniform();
            let mid = x1.lerp(&x2, alpha);
            let lhs = reg.value(&mid);
            let rhs = alpha * reg.value(&x1) + (1.0 - alpha) * reg.value(&x2);
            assert!(lhs <= rhs + 1e-9, "convexity violated: {lhs} > {rhs}");
        }
    }
}
