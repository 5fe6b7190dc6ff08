//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use sprs::CsMat;

use crate::error::{Error, Result};

const POWER_MAX_ITER: usize = 200_000;

pub(crate) fn to_nalgebra(m: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn check_symmetric(m: ArrayView2<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "symmetric matrix",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen(m: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    check_symmetric(m)?;
    let n = m.nrows();
    let eig = SymmetricEigen::new(to_nalgebra(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigensolver produced non-finite values".into()));
    }
    let vectors = Array2::from_shape_fn((n, n), |(i, c)| eig.eigenvectors[(i, order[c])]);
    Ok((values, vectors))
}

pub fn symmetric_eigenvalues(m: ArrayView2<f64>) -> Result<Vec<f64>> {
    symmetric_eigen(m).map(|(v, _)| v)
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Eigenvalues below `-tol·λ_max` are reported as an error; those within
/// `tol·λ_max` of zero are treated as exact zeros, since the square root
/// would otherwise amplify their rounding error.
pub fn psd_sqrt(m: ArrayView2<f64>, tol: f64) -> Result<Array2<f64>> {
    let (values, vectors) = symmetric_eigen(m)?;
    let cutoff = tol * values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if let Some(v) = values.iter().find(|&&v| v < -cutoff) {
        return Err(Error::Numeric(format!("matrix is not PSD (eigenvalue {v:e})")));
    }
    let roots = Array1::from_iter(values.iter().map(|&v| if v <= cutoff { 0.0 } else { v.sqrt() }));
    let scaled = &vectors * &roots;
    Ok(scaled.dot(&vectors.t()))
}

/// Largest eigenvalue of the PSD operator `apply` on R^dim by power iteration.
/// Stops once the eigen-residual falls below `tol` relative to the estimate.
pub fn power_iteration<F>(dim: usize, tol: f64, mut apply: F) -> Result<f64>
where
    F: FnMut(&Array1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return Ok(0.0);
    }
    // deterministic, non-degenerate start
    let mut v = Array1::from_shape_fn(dim, |j| 1.0 + 0.5 * ((j as f64) * 0.7548776662).sin());
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut rho_prev = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let w = apply(&v);
        let rho = v.dot(&w);
        if !rho.is_finite() {
            return Err(Error::Numeric("power iteration diverged".into()));
        }
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return Ok(0.0);
        }
        let resid = (&w - &(&v * rho)).dot(&(&w - &(&v * rho))).sqrt();
        if resid <= tol * rho.abs() || (rho - rho_prev).abs() <= 1e-15 * rho.abs() {
            return Ok(rho);
        }
        rho_prev = rho;
        v = w / wn;
    }
    Err(Error::NonConvergence {
        what: "power iteration",
        iterations: POWER_MAX_ITER,
        residual: f64::NAN,
    })
}

/// σ_max(A)² for a dense matrix.
pub fn spectral_norm_sq(a: ArrayView2<f64>, tol: f64) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    if a.nrows() < a.ncols() {
        power_iteration(a.nrows(), tol, |v| a.dot(&a.t().dot(v)))
    } else {
        power_iteration(a.ncols(), tol, |v| a.t().dot(&a.dot(v)))
    }
}

/// σ_max(A)² for a sparse matrix.
pub fn sparse_spectral_norm_sq(a: &CsMat<f64>, tol: f64) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 || a.nnz() == 0 {
        return Ok(0.0);
    }
    let at = a.transpose_view().to_csr();
    power_iteration(a.cols(), tol, |v| {
        let av = sparse_mul(a, v.view());
        sparse_mul(&at, av.view())
    })
}

pub fn sparse_mul(a: &CsMat<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    a * &v
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn dense_to_sparse(a: ArrayView2<f64>) -> CsMat<f64> {
    let mut tri = sprs::TriMat::new((a.nrows(), a.ncols()));
    for ((i, j), &v) in a.indexed_iter() {
        if v != 0.0 {
            tri.add_triplet(i, j, v);
        }
    }
    tri.to_csr()
}
