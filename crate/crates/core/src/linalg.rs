//! Dense matrix helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPd)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Correlation-matrix check: symmetric, unit diagonal, positive definite.
pub fn is_correlation(m: &DMatrix<f64>, tol: f64) -> bool {
    is_symmetric(m, tol)
        && (0..m.nrows()).all(|i| (m[(i, i)] - 1.0).abs() <= tol)
        && Cholesky::new(m.clone()).is_some()
}

/// Clip eigenvalues from below at `floor` and rebuild.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(floor)));
    symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

/// Nearest positive definite correlation matrix by eigenvalue clipping at
/// 1e-8 followed by rescaling to a unit diagonal. Returns the input untouched
/// when it already factorizes.
pub fn repair_correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if Cholesky::new(sym.clone()).is_some() {
        return sym;
    }
    let clipped = clip_eigenvalues(&sym, 1e-8);
    crate::stats::cov_to_corr(&clipped)
}

/// `L^{-1} x` for lower-triangular `L`.
pub fn forward_solve(l: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * out[j];
        }
        out[i] = s / l[(i, i)];
    }
    out
}

pub fn quad_form(m: &DMatrix<f64>, w: &[f64]) -> f64 {
    let v = DVector::from_column_slice(w);
    (v.transpose() * m * &v)[(0, 0)]
}

pub fn mat_vec(m: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let v = DVector::from_column_slice(w);
    (m * v).iter().cloned().collect()
}

/// Solve a (possibly singular) symmetric system in the least-squares sense.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(x) = a.clone().lu().solve(b) {
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    a.clone().svd(true, true).solve(b, 1e-12).ok()
}
