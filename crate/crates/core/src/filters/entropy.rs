use std::f64::consts::{E, PI};

use nalgebra::DMatrix;

use crate::error::{invalid, Result, SacbpError};

/// Exponentiated differential entropy `√det(2πe Σ)` and its gradient `½ value Σ⁻¹` with
/// respect to the entries of `Σ`.
pub fn gaussian_entropy_exp(cov: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let n = cov.nrows();
    if cov.ncols() != n || n == 0 {
        return Err(invalid("covariance must be square and non-empty"));
    }
    let chol = cov.clone().cholesky().ok_or(SacbpError::NotPositiveDefinite)?;
    let sqrt_det: f64 = chol.l_dirty().diagonal().iter().product();
    let value = (2.0 * PI * E).powf(n as f64 / 2.0) * sqrt_det;
    let grad = chol.inverse() * (0.5 * value);
    Ok((value, grad))
}
