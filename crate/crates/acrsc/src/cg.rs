//! Conjugate-gradient least squares on the normal equations.
//!
//! Computes the minimum-norm solution of `argmin_w ||A* w - g||` by running
//! CG on `A A* w = A g`, keeping the operator matrix-free. Starting from
//! zero the iterates stay in range(A), so for consistent (possibly singular)
//! systems CG converges to the pseudo-inverse solution `(A*)^+ g`.

use crate::tensor::ImageTensor;

/// Outcome of a CG least-squares solve. Non-convergence is reported through
/// the flag, with the best iterate retained, rather than as an error.
#[derive(Debug, Clone)]
pub struct CgSolution {
    /// Approximate minimum-norm least-squares solution in Y.
    pub w: ImageTensor,
    /// Final least-squares residual `||A* w - g||` in X.
    pub residual: f64,
    /// Normal-equation residual `||A A* w - A g||` at the returned iterate.
    pub normal_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Solve `A A* w = A g` by conjugate gradients.
///
/// `forward` applies `A: X -> Y`, `adjoint` applies `A*: Y -> X`. The solve
/// stops when the normal-equation residual drops below `tol * ||A g||`.
pub fn cg_least_squares<F, G>(
    adjoint: &G,
    forward: &F,
    g: &ImageTensor,
    tol: f64,
    max_iter: usize,
) -> CgSolution
where
    F: Fn(&ImageTensor) -> ImageTensor + ?Sized,
    G: Fn(&ImageTensor) -> ImageTensor + ?Sized,
{
    let b = forward(g);
    let b_norm = b.norm();
    let mut w = ImageTensor::zeros(b.shape());

    if b_norm == 0.0 {
        return CgSolution {
            residual: adjoint(&w).sub(g).norm(),
            normal_residual: 0.0,
            w,
            converged: true,
            iterations: 0,
        };
    }

    let threshold = tol * b_norm;
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs_old = r.norm_sq();

    let mut best_w = w.clone();
    let mut best_norm_res = rs_old.sqrt();
    let mut converged = best_norm_res <= threshold;
    let mut iterations = 0;

    if !converged {
        for iter in 1..=max_iter {
            iterations = iter;
            let mp = forward(&adjoint(&p));
            let p_mp = p.dot(&mp);
            if !(p_mp > 0.0) || !p_mp.is_finite() {
                break; // null or numerically degenerate direction
            }
            let alpha = rs_old / p_mp;
            w.axpy(alpha, &p);
            r.axpy(-alpha, &mp);
            let rs_new = r.norm_sq();
            let res = rs_new.sqrt();
            if res < best_norm_res {
                best_norm_res = res;
                best_w = w.clone();
            }
            if res <= threshold {
                converged = true;
                break;
            }
            p = r.add(&p.scale(rs_new / rs_old));
            rs_old = rs_new;
        }
    }

    let residual = adjoint(&best_w).sub(g).norm();
    CgSolution {
        w: best_w,
        residual,
        normal_residual: best_norm_res,
        converged,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_noise, RngStream};

    #[test]
    fn identity_operator_returns_g_exactly() {
        let mut rng = RngStream::new(1);
        let g = gaussian_noise(&[7], 1.0, &mut rng).unwrap();
        let id = |x: &ImageTensor| x.clone();
        let sol = cg_least_squares(&id, &id, &g, 1e-12, 50);
        assert_eq!(sol.w.data(), g.data());
        assert_eq!(sol.residual, 0.0);
        assert!(sol.converged);
    }

    #[test]
    fn scaled_identity_halves_g() {
        let mut rng = RngStream::new(2);
        let g = gaussian_noise(&[9], 1.0, &mut rng).unwrap();
        let fwd = |x: &ImageTensor| x.scale(2.0);
        let adj = |y: &ImageTensor| y.scale(2.0);
        let sol = cg_least_squares(&adj, &fwd, &g, 1e-14, 50);
        for (w, gv) in sol.w.data().iter().zip(g.data().iter()) {
            assert!((w - 0.5 * gv).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let g = ImageTensor::zeros(&[6]);
        let id = |x: &ImageTensor| x.clone();
        let sol = cg_least_squares(&id, &id, &g, 1e-12, 10);
        assert!(sol.w.data().iter().all(|&v| v == 0.0));
        assert!(sol.converged);
    }

    #[test]
    fn nonconvergence_flagged_not_fatal() {
        // A stiff diagonal system with a zero iteration budget.
        let mut rng = RngStream::new(3);
        let g = gaussian_noise(&[8], 1.0, &mut rng).unwrap();
        let fwd = |x: &ImageTensor| {
            let mut y = x.clone();
            for (i, v) in y.data_mut().iter_mut().enumerate() {
                *v *= 1.0 + i as f64;
            }
            y
        };
        let sol = cg_least_squares(&fwd, &fwd, &g, 1e-14, 1);
        assert!(!sol.converged);
        assert!(sol.residual.is_finite());
    }
}
