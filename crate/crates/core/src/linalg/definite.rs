use nalgebra::{DMatrix, DVector};

use super::{require_square, MODULE};
use crate::error::{Error, Result};

/// `(m + m^T)/2`, provided the relative asymmetry is at most 1e-10.
pub fn symmetrize_checked(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square(m, "symmetric matrix")?;
    let scale = m.norm();
    if scale == 0.0 {
        return Ok(m.clone());
    }
    let asymmetry = (m - m.transpose()).norm() / scale;
    if asymmetry > 1e-10 {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = symmetrize_checked(m)?;
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

pub fn is_positive_definite(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(symmetric_eigenvalues(m)?.first().map_or(true, |&l| l > tol))
}

pub fn is_positive_semidefinite(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(symmetric_eigenvalues(m)?.first().map_or(true, |&l| l >= -tol))
}

/// `m >= 0` with null space equal to the span of the columns of `kernel_basis`.
///
/// The basis columns are assumed linearly independent. The null space is the
/// eigenspace of eigenvalues at most `tol`; it must have the same dimension as
/// the basis, and `||m k|| <= tol` for every normalized basis column `k`.
pub fn is_positive_semidefinite_wrt(
    m: &DMatrix<f64>,
    kernel_basis: &DMatrix<f64>,
    tol: f64,
) -> Result<bool> {
    let s = symmetrize_checked(m)?;
    if kernel_basis.nrows() != s.nrows() {
        return Err(Error::DimensionMismatch {
            context: "is_positive_semidefinite_wrt: kernel basis rows",
            expected: s.nrows(),
            got: kernel_basis.nrows(),
        });
    }
    let ev = symmetric_eigenvalues(&s)?;
    if ev.first().is_some_and(|&l| l < -tol) {
        return Ok(false);
    }
    let null_dim = ev.iter().filter(|&&l| l <= tol).count();
    if null_dim != kernel_basis.ncols() {
        return Ok(false);
    }
    for col in kernel_basis.column_iter() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::numerical(MODULE, "zero kernel basis vector"));
        }
        let k: DVector<f64> = col / norm;
        if (&s * k).norm() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Principal square root of a positive semidefinite matrix.
///
/// Eigenvalues in `[-1e-12 * max(1, lambda_max), 0)` are treated as roundoff
/// and zeroed; anything more negative is an error.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = symmetrize_checked(m)?;
    if s.is_empty() {
        return Ok(s);
    }
    let eig = s.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let floor = -1e-12 * lmax.abs().max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for l in roots.iter_mut() {
        if *l < floor {
            return Err(Error::numerical(
                MODULE,
                format!("square root of an indefinite matrix (eigenvalue {l:.3e})"),
            ));
        }
        *l = l.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&r + r.transpose()) * 0.5)
}
