//! Small dense linear-algebra helpers shared by the covariance and spectral
//! modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

pub fn frobenius_norm(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ⟨A, B⟩_F = tr(A^H B).
pub fn frobenius_inner(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn trace(a: &CMatrix) -> Complex64 {
    a.diagonal().iter().sum()
}

/// ‖estimate − truth‖_F / ‖truth‖_F.
pub fn relative_error(estimate: &CMatrix, truth: &CMatrix) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::DimensionMismatch {
            left: estimate.nrows(),
            right: truth.nrows(),
        });
    }
    let denom = frobenius_norm(truth);
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("relative error against a zero matrix"));
    }
    Ok(frobenius_norm(&(estimate - truth)) / denom)
}

/// Relative error where a zero truth paired with a zero estimate counts as
/// exact agreement (degenerate σ_g = 0 runs).
pub fn guarded_relative_error(estimate: &CMatrix, truth: &CMatrix) -> Result<f64> {
    if frobenius_norm(truth) == 0.0 && frobenius_norm(estimate) == 0.0 {
        return Ok(0.0);
    }
    relative_error(estimate, truth)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry of |A − A^H|.
pub fn hermitian_residual(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn symmetrize(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).unscale(2.0)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// non-increasing order. Ties keep their original index order.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Same as [`hermitian_eigen`] for real symmetric matrices.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Promote a real matrix to complex.
pub fn complexify(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| Complex64::new(x, 0.0))
}
