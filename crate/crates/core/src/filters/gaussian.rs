use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{min_eigenvalue, symmetrize, unvec};

/// Gaussian belief `N(mean, cov)`. Packs to `mean ⊕ vec(cov)` with `vec` column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(invalid("covariance shape does not match the mean"));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn packed_len(n: usize) -> usize {
        n + n * n
    }

    /// Recovers `n` from a packed length `n + n²`.
    pub fn dim_from_packed(len: usize) -> Option<usize> {
        let n = ((-1.0 + (1.0 + 4.0 * len as f64).sqrt()) / 2.0).round() as usize;
        (n + n * n == len).then_some(n)
    }

    pub fn pack(&self) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(Self::packed_len(n));
        self.pack_into(out.as_mut_slice());
        out
    }

    pub fn pack_into(&self, out: &mut [f64]) {
        let n = self.dim();
        out[..n].copy_from_slice(self.mean.as_slice());
        out[n..n + n * n].copy_from_slice(self.cov.as_slice());
    }

    pub fn unpack(packed: &[f64], n: usize) -> Self {
        Self {
            mean: DVector::from_column_slice(&packed[..n]),
            cov: unvec(&packed[n..n + n * n], n),
        }
    }

    pub fn symmetrize(&mut self) {
        symmetrize(&mut self.cov);
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pack_unpack_round_trips(vals in proptest::collection::vec(-10.0f64..10.0, 3 + 9)) {
            let mean = DVector::from_column_slice(&vals[..3]);
            let raw = DMatrix::from_column_slice(3, 3, &vals[3..]);
            let cov = &raw + raw.transpose();
            let b = GaussianBelief::new(mean, cov).unwrap();
            let packed = b.pack();
            prop_assert_eq!(GaussianBelief::dim_from_packed(packed.len()), Some(3));
            prop_assert_eq!(GaussianBelief::unpack(packed.as_slice(), 3), b);
        }
    }
}
