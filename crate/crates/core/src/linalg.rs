//! Small dense linear-algebra helpers shared by the filters and the belief models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SacbpError};

const MAX_JITTER_ATTEMPTS: usize = 3;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

/// Symmetrizes `cov` and adds `1e-9 * trace / n` to the diagonal (at most three times)
/// until a Cholesky factorization succeeds.
pub fn repair_pd(mut cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(SacbpError::NonFinite("covariance"));
    }
    symmetrize(&mut cov);
    if cov.clone().cholesky().is_some() {
        return Ok(cov);
    }
    let n = cov.nrows().max(1) as f64;
    let jitter = 1e-9 * cov.trace() / n;
    if jitter <= 0.0 {
        return Err(SacbpError::NotPositiveDefinite);
    }
    for _ in 0..MAX_JITTER_ATTEMPTS {
        for i in 0..cov.nrows() {
            cov[(i, i)] += jitter;
        }
        if cov.clone().cholesky().is_some() {
            return Ok(cov);
        }
    }
    Err(SacbpError::NotPositiveDefinite)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrized(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Column-major vectorization.
pub fn vec_cols(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v)
}

/// Frobenius inner product.
pub fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// A square root `L` with `L Lᵀ = cov`, falling back to an eigendecomposition with clamped
/// eigenvalues when the matrix is only positive semidefinite.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = cov.clone().cholesky() {
        return chol.l();
    }
    let eig = symmetrized(cov).symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    scaled
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = standard_normal_vector(mean.len(), rng);
    mean + psd_sqrt(cov) * z
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
