use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest tolerated `max |A − Aᵀ|` before symmetrization.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-8;

fn symmetric_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !a.is_square() {
        return Err(Error::argument(format!("matrix is {}×{}, not square", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("matrix has non-finite entries"));
    }
    let asym = (a - a.transpose()).amax();
    if asym > ASYMMETRY_TOLERANCE {
        return Err(Error::argument(format!("asymmetry {asym:e} exceeds {ASYMMETRY_TOLERANCE:e}")));
    }
    Ok(SymmetricEigen::new((a + a.transpose()) * 0.5))
}

fn rebuild(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let m = v * d * v.transpose();
    (&m + m.transpose()) * 0.5
}

/// Frobenius-nearest PSD matrix: symmetrize, then clip eigenvalues at 0.
/// Returns the repaired matrix and the smallest eigenvalue before clipping.
pub fn clip_psd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = symmetric_eigen(a)?;
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((rebuild(&eig, |l| l.max(0.0)), min))
}

/// Symmetric PSD square root `σ` with `σσ = A` after clipping negative
/// eigenvalues of the symmetrized `A` at 0.
pub fn sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(a)?;
    Ok(rebuild(&eig, |l| l.max(0.0).sqrt()))
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix, treating
/// eigenvalues below `cutoff·λ_max` as zero. Also returns the rank.
pub fn pinv_psd(a: &DMatrix<f64>, cutoff: f64) -> Result<(DMatrix<f64>, usize)> {
    let eig = symmetric_eigen(a)?;
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = cutoff * max;
    let rank = eig.eigenvalues.iter().filter(|l| **l > floor && **l > 0.0).count();
    Ok((rebuild(&eig, |l| if l > floor && l > 0.0 { 1.0 / l } else { 0.0 }), rank))
}
