//! Linear forward operators with exact adjoints.
//!
//! Every operator kind exposes `apply` (A), `adjoint_apply` (A*), and
//! pseudo-inverse application through the CG least-squares kernel. Adjoints
//! are implemented as the exact transpose of the discrete forward map, so
//! the dot-test holds to rounding error; the source-condition penalty and
//! the variational solvers rely on that.

mod blur;
mod fbp;
mod radon;

pub use blur::BlurKernel;
pub use fbp::fbp;
pub use radon::{RadonGeometry, RadonTransform};

use crate::cg::{cg_least_squares, CgSolution};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::ImageTensor;

/// Dense matrix operator, row-major `m x n`.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "dense matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Seeded i.i.d. standard Gaussian entries.
    pub fn seeded_gaussian(rows: usize, cols: usize, rng: &mut RngStream) -> Self {
        let data = (0..rows * cols).map(|_| rng.gaussian()).collect();
        DenseMatrix { rows, cols, data }
    }

    /// Seeded matrix with a prescribed singular spectrum: `A = U diag(s) V^T`
    /// with random orthonormal factors. `spectrum` needs `min(rows, cols)`
    /// entries.
    pub fn with_spectrum(rows: usize, cols: usize, spectrum: &[f64], rng: &mut RngStream) -> Result<Self> {
        let k = rows.min(cols);
        if spectrum.len() != k {
            return Err(Error::invalid(format!(
                "spectrum needs {k} entries for a {rows}x{cols} matrix, got {}",
                spectrum.len()
            )));
        }
        let u = random_orthonormal_columns(rows, k, rng);
        let v = random_orthonormal_columns(cols, k, rng);
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
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *yi = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        }
        y
    }

    fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (xj, a) in x.iter_mut().zip(row.iter()) {
                *xj += a * yi;
            }
        }
        x
    }
}

/// Orthonormal columns via modified Gram-Schmidt on Gaussian draws,
/// returned column-major (each inner vec is one column of length `dim`).
pub(crate) fn random_orthonormal_columns(
    dim: usize,
    count: usize,
    rng: &mut RngStream,
) -> Vec<Vec<f64>> {
    assert!(count <= dim);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        // two orthogonalization sweeps for numerical safety
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = c.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c.iter()) {
                    *vi -= d * ci;
                }
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for vi in &mut v {
            *vi /= n;
        }
        cols.push(v);
    }
    cols
}

/// A linear forward operator `A: X -> Y`.
#[derive(Debug, Clone)]
pub enum ForwardOp {
    Identity { shape: Vec<usize> },
    ScaledIdentity { shape: Vec<usize>, scale: f64 },
    Blur(BlurKernel),
    Dense(DenseMatrix),
    Radon(RadonTransform),
}

impl ForwardOp {
    pub fn identity(shape: &[usize]) -> Self {
        ForwardOp::Identity { shape: shape.to_vec() }
    }

    pub fn scaled_identity(shape: &[usize], scale: f64) -> Self {
        ForwardOp::ScaledIdentity { shape: shape.to_vec(), scale }
    }

    pub fn gaussian_blur(shape: &[usize], sigma: f64, width: usize) -> Result<Self> {
        Ok(ForwardOp::Blur(BlurKernel::new(shape, sigma, width)?))
    }

    pub fn dense(matrix: DenseMatrix) -> Self {
        ForwardOp::Dense(matrix)
    }

    pub fn radon(geometry: RadonGeometry) -> Result<Self> {
        Ok(ForwardOp::Radon(RadonTransform::new(geometry)?))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ForwardOp::Identity { .. } => "identity",
            ForwardOp::ScaledIdentity { .. } => "scaled_identity",
            ForwardOp::Blur(_) => "blur",
            ForwardOp::Dense(_) => "dense",
            ForwardOp::Radon(_) => "radon",
        }
    }

    pub fn domain_shape(&self) -> Vec<usize> {
        match self {
            ForwardOp::Identity { shape } | ForwardOp::ScaledIdentity { shape, .. } => shape.clone(),
            ForwardOp::Blur(b) => b.shape().to_vec(),
            ForwardOp::Dense(m) => vec![m.cols()],
            ForwardOp::Radon(r) => r.domain_shape(),
        }
    }

    pub fn range_shape(&self) -> Vec<usize> {
        match self {
            ForwardOp::Identity { shape } | ForwardOp::ScaledIdentity { shape, .. } => shape.clone(),
            ForwardOp::Blur(b) => b.shape().to_vec(),
            ForwardOp::Dense(m) => vec![m.rows()],
            ForwardOp::Radon(r) => r.range_shape(),
        }
    }

    /// Apply `A x`.
    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        if x.shape() != self.domain_shape().as_slice() {
            return Err(Error::shape("apply", &self.domain_shape(), x.shape()));
        }
        Ok(self.apply_unchecked(x))
    }

    /// Apply the adjoint `A* y`.
    pub fn adjoint_apply(&self, y: &ImageTensor) -> Result<ImageTensor> {
        if y.shape() != self.range_shape().as_slice() {
            return Err(Error::shape("adjoint_apply", &self.range_shape(), y.shape()));
        }
        Ok(self.adjoint_unchecked(y))
    }

    pub(crate) fn apply_unchecked(&self, x: &ImageTensor) -> ImageTensor {
        match self {
            ForwardOp::Identity { .. } => x.clone(),
            ForwardOp::ScaledIdentity { scale, .. } => x.scale(*scale),
            ForwardOp::Blur(b) => b.forward(x),
            ForwardOp::Dense(m) => ImageTensor::from_parts(vec![m.rows()], m.matvec(x.data())),
            ForwardOp::Radon(r) => r.forward(x),
        }
    }

    pub(crate) fn adjoint_unchecked(&self, y: &ImageTensor) -> ImageTensor {
        match self {
            ForwardOp::Identity { .. } => y.clone(),
            ForwardOp::ScaledIdentity { scale, .. } => y.scale(*scale),
            ForwardOp::Blur(b) => b.adjoint(y),
            ForwardOp::Dense(m) => ImageTensor::from_parts(vec![m.cols()], m.matvec_t(y.data())),
            ForwardOp::Radon(r) => r.adjoint(y),
        }
    }

    /// Apply the pseudo-inverse of the adjoint: `w = (A*)^+ g` for `g` in X.
    ///
    /// The residual in the returned solution reports `||A* w - g||`, so
    /// callers can detect `g` far from range(A*).
    pub fn pinv_adjoint_apply(&self, g: &ImageTensor, tol: f64, max_iter: usize) -> Result<CgSolution> {
        if g.shape() != self.domain_shape().as_slice() {
            return Err(Error::shape("pinv_adjoint_apply", &self.domain_shape(), g.shape()));
        }
        let fwd = |x: &ImageTensor| self.apply_unchecked(x);
        let adj = |y: &ImageTensor| self.adjoint_unchecked(y);
        Ok(cg_least_squares(&adj, &fwd, g, tol, max_iter))
    }

    /// Apply the pseudo-inverse `x = A^+ y` for `y` in Y (minimum-norm
    /// least-squares solution of `A x = y`).
    pub fn pinv_apply(&self, y: &ImageTensor, tol: f64, max_iter: usize) -> Result<CgSolution> {
        if y.shape() != self.range_shape().as_slice() {
            return Err(Error::shape("pinv_apply", &self.range_shape(), y.shape()));
        }
        let fwd = |x: &ImageTensor| self.apply_unchecked(x);
        let adj = |yy: &ImageTensor| self.adjoint_unchecked(yy);
        // Roles swap: minimizing ||A x - y|| runs CG on A* A x = A* y.
        Ok(cg_least_squares(&fwd, &adj, y, tol, max_iter))
    }

    /// Maximum relative adjoint discrepancy `|<Ax,y> - <x,A*y>| / (||Ax|| ||y||)`
    /// over seeded random trial pairs.
    pub fn dot_test(&self, trials: usize, rng: &mut RngStream) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let x = random_tensor(&self.domain_shape(), rng);
            let y = random_tensor(&self.range_shape(), rng);
            let ax = self.apply_unchecked(&x);
            let aty = self.adjoint_unchecked(&y);
            let lhs = ax.dot(&y);
            let rhs = x.dot(&aty);
            let denom = ax.norm() * y.norm() + f64::MIN_POSITIVE;
            worst = worst.max((lhs - rhs).abs() / denom);
        }
        worst
    }

    /// Power-iteration estimate of the spectral norm `||A||`.
    pub fn op_norm_estimate(&self, iters: usize, rng: &mut RngStream) -> f64 {
        let mut v = random_tensor(&self.domain_shape(), rng);
        let mut estimate = 0.0;
        for _ in 0..iters {
            let av = self.apply_unchecked(&v);
            let atav = self.adjoint_unchecked(&av);
            let n = atav.norm();
            if n == 0.0 {
                return 0.0;
            }
            estimate = av.norm() / v.norm();
            v = atav.scale(1.0 / n);
        }
        estimate
    }
}

fn random_tensor(shape: &[usize], rng: &mut RngStream) -> ImageTensor {
    let n: usize = shape.iter().product();
    ImageTensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gaussian()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_kinds() -> Vec<ForwardOp> {
        let mut rng = RngStream::new(77);
        vec![
            ForwardOp::identity(&[6, 6]),
            ForwardOp::scaled_identity(&[5], 0.5),
            ForwardOp::gaussian_blur(&[12, 12], 1.2, 7).unwrap(),
            ForwardOp::dense(DenseMatrix::seeded_gaussian(4, 9, &mut rng)),
            ForwardOp::radon(RadonGeometry::new(16, 12, 24).unwrap()).unwrap(),
        ]
    }

    #[test]
    fn identity_apply_roundtrip() {
        let mut rng = RngStream::new(1);
        let a = ForwardOp::identity(&[4, 4]);
        let x = random_tensor(&[4, 4], &mut rng);
        assert_eq!(a.apply(&x).unwrap().data(), x.data());
        assert_eq!(a.adjoint_apply(&x).unwrap().data(), x.data());
    }

    #[test]
    fn dense_apply_matches_explicit_matvec() {
        let mut rng = RngStream::new(42);
        let m = DenseMatrix::seeded_gaussian(4, 6, &mut rng);
        let x = random_tensor(&[6], &mut rng);
        let y = ForwardOp::dense(m.clone()).apply(&x).unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += m.entries()[i * 6 + j] * x.data()[j];
            }
            assert!((y.data()[i] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_adjoint_is_transpose_action() {
        let mut rng = RngStream::new(43);
        let m = DenseMatrix::seeded_gaussian(3, 5, &mut rng);
        let y = random_tensor(&[3], &mut rng);
        let x = ForwardOp::dense(m.clone()).adjoint_apply(&y).unwrap();
        for j in 0..5 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += m.entries()[i * 5 + j] * y.data()[i];
            }
            assert!((x.data()[j] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn dot_test_all_kinds() {
        let mut rng = RngStream::new(2024);
        for op in all_kinds() {
            let worst = op.dot_test(20, &mut rng);
            assert!(
                worst <= 1e-10,
                "dot-test failed for {}: {worst}",
                op.kind_name()
            );
        }
    }

    #[test]
    fn apply_linearity() {
        let mut rng = RngStream::new(8);
        for op in all_kinds() {
            let x = random_tensor(&op.domain_shape(), &mut rng);
            let z = random_tensor(&op.domain_shape(), &mut rng);
            let lhs = op.apply_unchecked(&x.scale(0.3).add(&z.scale(-1.7)));
            let rhs = op.apply_unchecked(&x).scale(0.3).add(&op.apply_unchecked(&z).scale(-1.7));
            let rel = lhs.sub(&rhs).norm() / (rhs.norm() + 1e-300);
            assert!(rel <= 1e-12, "linearity failed for {}: {rel}", op.kind_name());
        }
    }

    #[test]
    fn pinv_adjoint_identity_and_scaled() {
        let mut rng = RngStream::new(5);
        let g = random_tensor(&[7], &mut rng);
        let id = ForwardOp::identity(&[7]);
        let w = id.pinv_adjoint_apply(&g, 1e-12, 50).unwrap();
        assert!(w.w.sub(&g).norm() < 1e-12);

        let half = ForwardOp::scaled_identity(&[7], 0.5);
        let w2 = half.pinv_adjoint_apply(&g, 1e-14, 50).unwrap();
        assert!(w2.w.sub(&g.scale(2.0)).norm() < 1e-10);
    }

    #[test]
    fn pinv_adjoint_roundtrip_on_range() {
        // Full row rank A: (A*)^+ (A* w0) = w0.
        let mut rng = RngStream::new(6);
        let a = ForwardOp::dense(DenseMatrix::seeded_gaussian(5, 11, &mut rng));
        let w0 = random_tensor(&[5], &mut rng);
        let g = a.adjoint_apply(&w0).unwrap();
        let sol = a.pinv_adjoint_apply(&g, 1e-12, 200).unwrap();
        let rel = sol.w.sub(&w0).norm() / w0.norm();
        assert!(rel <= 1e-6, "roundtrip error {rel}");
    }

    #[test]
    fn spectrum_construction_matches_request() {
        let mut rng = RngStream::new(9);
        let spectrum = [1.0, 0.5, 0.25];
        let m = DenseMatrix::with_spectrum(3, 7, &spectrum, &mut rng).unwrap();
        let op = ForwardOp::dense(m);
        // largest singular value via power iteration
        let est = op.op_norm_estimate(200, &mut rng);
        assert!((est - 1.0).abs() < 1e-6, "op norm {est}");
    }
}
