use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SacbpError};

/// Per-coordinate central-difference step.
pub fn fd_step(xi: f64) -> f64 {
    (1e-6 * xi.abs()).max(1e-6)
}

/// Central finite-difference Jacobian of `f` at `x`, step `max(1e-6, 1e-6 |x_i|)`.
pub fn jacobian<F>(f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    jacobian_with(|z| Ok(f(z)), x)
}

pub fn jacobian_with<F>(f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut probe = x.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for i in 0..n {
        let h = fd_step(x[i]);
        let (hi, lo) = (x[i] + h, x[i] - h);
        probe[i] = hi;
        let plus = f(&probe)?;
        probe[i] = lo;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if plus.len() != minus.len() {
            return Err(SacbpError::InvalidArgument("function output length changed".into()));
        }
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(SacbpError::NonFinite("jacobian sample"));
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), n));
        // divide by the step actually taken after rounding
        let col = (plus - minus) / (hi - lo);
        jac.set_column(i, &col);
    }
    match jac {
        Some(j) => Ok(j),
        None => Ok(DMatrix::zeros(f(x)?.len(), 0)),
    }
}

/// Central-difference directional derivative `(f(x + h d) - f(x - h d)) / 2h`.
pub fn directional_derivative<F>(f: F, x: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let dn = d.norm();
    if dn == 0.0 {
        let y = f(x)?;
        return Ok(DVector::zeros(y.len()));
    }
    let h = (1e-6 * x.norm() / dn).max(1e-6 / dn);
    let plus = f(&(x + d * h))?;
    let minus = f(&(x - d * h))?;
    if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
        return Err(SacbpError::NonFinite("directional derivative sample"));
    }
    Ok((plus - minus) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_function_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.5]);
        let b = DVector::from_vec(vec![0.3, -0.7]);
        let x = DVector::from_vec(vec![0.5, -0.25, 0.125]);
        let jac = jacobian(|z| &a * z + &b, &x).unwrap();
        let err = (jac - &a).abs().max();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn squared_norm_gradient() {
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let jac = jacobian(|z| DVector::from_element(1, z.norm_squared()), &x).unwrap();
        assert!((jac[(0, 0)] - 2.0).abs() < 1e-6);
        assert!((jac[(0, 1)] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_samples_are_errors() {
        let x = DVector::from_vec(vec![0.0]);
        let r = jacobian(|z| DVector::from_element(1, 1.0 / z[0].abs().min(0.0)), &x);
        assert!(matches!(r, Err(SacbpError::NonFinite(_))));
    }
}
