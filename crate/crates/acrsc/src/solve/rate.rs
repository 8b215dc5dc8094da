//! Convergence-rate sweep.
//!
//! For a case where the source condition holds by construction
//! (`A* w_tilde = grad psi(x_tilde)`), solve the variational problem on a
//! grid of noise levels with `lambda = c * delta` and record the Bregman
//! distance to `x_tilde` against the bound `lambda ||w_tilde||^2 / 2 +
//! delta^2 / (2 lambda)`. Choosing `lambda` proportional to `delta` makes
//! the bound O(delta); the fitted log-log slope of the measured distance
//! checks that rate numerically.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::op::{DenseMatrix, ForwardOp};
use crate::reg::{bregman_distance, Regularizer};
use crate::rng::{gaussian_noise, RngStream};
use crate::solve::{solve_gd, Init, SolveConfig};
use crate::tensor::ImageTensor;

/// A rate-sweep problem instance. The source condition must hold for the
/// regularizer the sweep is run with: `A* w_tilde = grad psi(x_tilde)`.
#[derive(Debug, Clone)]
pub struct RateSweepCase {
    pub a: ForwardOp,
    pub w_tilde: ImageTensor,
    pub x_tilde: ImageTensor,
    pub deltas: Vec<f64>,
    /// Proportionality constant: `lambda = c * delta` (rows with
    /// `delta = 0` use `lambda = c`).
    pub c: f64,
    pub noise_seed: u64,
    /// Optional fixed noise direction (unit norm). When absent the sweep
    /// draws one seeded Gaussian direction and rescales it per row.
    pub noise_dir: Option<ImageTensor>,
}

impl RateSweepCase {
    /// The analytic quadratic case: a seeded dense operator with a
    /// geometric singular spectrum spanning the swept `lambda` range (so
    /// the worst-case rate is actually attained), a unit-norm source
    /// element with equal energy in every left singular direction, and
    /// `x_tilde = A* w_tilde` which is exactly the minimum-norm solution
    /// the quadratic penalty selects.
    pub fn quadratic_seeded(
        rows: usize,
        cols: usize,
        deltas: Vec<f64>,
        c: f64,
        seed: u64,
    ) -> Result<RateSweepCase> {
        if rows == 0 || cols == 0 || rows > cols {
            return Err(Error::invalid(
                "quadratic case needs a full-row-rank (rows <= cols) operator",
            ));
        }
        let mut rng = RngStream::new(seed);
        let k = rows.min(cols);
        let (smin, smax) = (1e-3f64, 1.0f64);
        let spectrum: Vec<f64> = (0..k)
            .map(|i| {
                let t = if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 };
                smax * (smin / smax).powf(t)
            })
            .collect();
        let u = crate::op::random_orthonormal_columns(rows, k, &mut rng);
        let v = crate::op::random_orthonormal_columns(cols, k, &mut rng);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0;
                for (l, s) in spectrum.iter().enumerate() {
                    acc += u[l][i] * s * v[l][j];
                }
                data[i * cols + j] = acc;
            }
        }
        let a = ForwardOp::dense(DenseMatrix::new(rows, cols, data)?);
        // w_tilde = U 1/sqrt(k): unit norm, equal weight per mode
        let mut w_data = vec![0.0; rows];
        let coeff = 1.0 / (k as f64).sqrt();
        for col in &u {
            for (wi, ci) in w_data.iter_mut().zip(col.iter()) {
                *wi += coeff * ci;
            }
        }
        let w = ImageTensor::from_vec(&[rows], w_data)?;
        let x_tilde = a.adjoint_apply(&w)?;
        // Noise direction with equal energy (seeded signs) in every left
        // singular direction: the measured distance then tracks its
        // expectation over white noise, so the fitted rate is stable.
        let mut e_data = vec![0.0; rows];
        for col in &u {
            let sign = if rng.uniform() < 0.5 { -coeff } else { coeff };
            for (ei, ci) in e_data.iter_mut().zip(col.iter()) {
                *ei += sign * ci;
            }
        }
        let e = ImageTensor::from_vec(&[rows], e_data)?;
        Ok(RateSweepCase {
            a,
            w_tilde: w,
            x_tilde,
            deltas,
            c,
            noise_seed: seed ^ 0x9e3779b97f4a7c15,
            noise_dir: Some(e),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::invalid("empty delta grid"));
        }
        if self.deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid("deltas must be finite and nonnegative"));
        }
        if !(self.c > 0.0) {
            return Err(Error::invalid("proportionality constant c must be positive"));
        }
        Ok(())
    }

    /// A gradient-descent budget safe for this operator: step below
    /// `1 / (||A||^2 + lambda_max L_psi)` with a generous iteration cap.
    pub fn default_solve_config(&self) -> SolveConfig {
        let mut rng = RngStream::new(self.noise_seed ^ 0x5bf0_3635);
        let norm = self.a.op_norm_estimate(100, &mut rng);
        let lambda_max = self
            .deltas
            .iter()
            .fold(self.c, |acc, d| acc.max(self.c * d));
        SolveConfig {
            lambda: 1.0, // replaced per row
            step_size: 0.95 / (norm * norm + lambda_max),
            max_iters: 80_000,
            inner_iters: 100,
            outer_iters: 1,
            init: Init::Zero,
            snapshot_stride: 0,
            discrepancy_delta: None,
            tau: 1.0,
        }
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub delta: f64,
    pub lambda: f64,
    pub bregman_d: f64,
    pub bound: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RateSweepResult {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `ln d` against `ln delta` over rows with
    /// positive `delta` and `d`.
    pub slope: f64,
}

pub fn rate_sweep_csv_header() -> &'static str {
    "delta,lambda,bregman_d,bound,residual,converged"
}

pub fn rate_row_csv(row: &RateRow) -> String {
    format!(
        "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
        row.delta, row.lambda, row.bregman_d, row.bound, row.residual, row.converged
    )
}

/// Run the sweep. Solver failures flag the row but keep it in the table.
pub fn rate_sweep<R: Regularizer + Sync + ?Sized>(
    case: &RateSweepCase,
    reg: &R,
    solve_cfg: &SolveConfig,
) -> Result<RateSweepResult> {
    case.validate()?;
    let w_norm_sq = case.w_tilde.norm_sq();
    let y0 = case.a.apply(&case.x_tilde)?;
    // one noise direction, rescaled per row to hit ||e|| = delta exactly;
    // the bound's hypothesis is sharp for every row
    let e_unit = match &case.noise_dir {
        Some(dir) => dir.scale(1.0 / dir.norm()),
        None => {
            let mut rng = RngStream::new(case.noise_seed);
            let mut e = gaussian_noise(y0.shape(), 1.0, &mut rng)?;
            let n = e.norm();
            e.scale_in_place(1.0 / n);
            e
        }
    };

    let rows: Vec<Result<RateRow>> = case
        .deltas
        .par_iter()
        .map(|&delta| {
            let lambda = if delta > 0.0 { case.c * delta } else { case.c };
            let mut y = y0.clone();
            if delta > 0.0 {
                y.axpy(delta, &e_unit);
            }
            let cfg = SolveConfig {
                lambda,
                ..solve_cfg.clone()
            };
            let report = solve_gd(&case.a, &y, reg, &cfg)?;
            let d = bregman_distance(reg, &report.x_final, &case.x_tilde);
            let bound = lambda * w_norm_sq / 2.0 + delta * delta / (2.0 * lambda);
            Ok(RateRow {
                delta,
                lambda,
                bregman_d: d,
                bound,
                residual: *report.residual_trace.last().unwrap(),
                converged: report.converged && !report.diverged,
            })
        })
        .collect();
    let rows: Vec<RateRow> = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.delta > 0.0 && r.bregman_d > 0.0)
        .map(|r| (r.delta.ln(), r.bregman_d.ln()))
        .collect();
    let slope = fit_slope(&pts);

    Ok(RateSweepResult { rows, slope })
}

/// Least-squares slope of y against x.
fn fit_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Log-spaced grid from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reg::QuadraticTestRegularizer;

    #[test]
    fn validation_rejects_empty_grid() {
        let case = RateSweepCase::quadratic_seeded(6, 9, vec![], 1.0, 3);
        assert!(case.unwrap().validate().is_err());
    }

    #[test]
    fn quadratic_case_satisfies_source_condition_exactly() {
        let case =
            RateSweepCase::quadratic_seeded(8, 12, vec![0.01], 1.0, 4).unwrap();
        // grad psi(x_tilde) = x_tilde for the quadratic, and x_tilde = A* w
        let atw = case.a.adjoint_apply(&case.w_tilde).unwrap();
        assert_eq!(atw.data(), case.x_tilde.data());
    }

    #[test]
    fn sweep_rows_satisfy_theorem_bound_and_slope_near_one() {
        let deltas = log_grid(1e-3, 1e-1, 7);
        let case = RateSweepCase::quadratic_seeded(20, 30, deltas, 1.0, 7).unwrap();
        let cfg = case.default_solve_config();
        let result = rate_sweep(&case, &QuadraticTestRegularizer, &cfg).unwrap();
        for row in &result.rows {
            assert!(row.converged, "row delta {} did not converge", row.delta);
            assert!(
                row.bregman_d <= row.bound + 1e-9,
                "delta {}: d {} exceeds bound {}",
                row.delta,
                row.bregman_d,
                row.bound
            );
        }
        assert!(
            (0.85..=1.15).contains(&result.slope),
            "slope {} outside [0.85, 1.15]",
            result.slope
        );
    }

    #[test]
    fn zero_delta_row_bounded_by_lambda_term_and_vanishes_with_c() {
        let mut last_d = f64::INFINITY;
        for c in [1e-1, 1e-2, 1e-3] {
            let case = RateSweepCase::quadratic_seeded(10, 14, vec![0.0], c, 11).unwrap();
            let cfg = case.default_solve_config();
            let result = rate_sweep(&case, &QuadraticTestRegularizer, &cfg).unwrap();
            let row = &result.rows[0];
            assert_eq!(row.lambda, c);
            let lambda_term = row.lambda * case.w_tilde.norm_sq() / 2.0;
            assert!(row.bregman_d <= lambda_term + 1e-9);
            assert!(row.bregman_d < last_d, "d not decreasing as c shrinks");
            last_d = row.bregman_d;
        }
    }
}
