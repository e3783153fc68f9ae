use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result, SacbpError};

/// Unnormalized categorical belief: `P(x = i) = w_i / Σ w`.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalBelief {
    weights: DVector<f64>,
}

impl CategoricalBelief {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("categorical weights must be finite and nonnegative"));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(invalid("categorical weights must not all be zero"));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn probabilities(&self) -> DVector<f64> {
        &self.weights / self.weights.sum()
    }
}

/// Bayes update in unnormalized form. `likelihood[(y, i)] = p(y | x = i)`.
pub fn categorical_update(
    belief: &CategoricalBelief,
    likelihood: &DMatrix<f64>,
    y: usize,
) -> Result<CategoricalBelief> {
    let n = belief.weights.len();
    if likelihood.ncols() != n {
        return Err(invalid("likelihood table has the wrong number of states"));
    }
    if y >= likelihood.nrows() {
        return Err(invalid("observation label out of range"));
    }
    if likelihood.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("likelihood entries must lie in [0, 1]"));
    }
    let post = DVector::from_fn(n, |i, _| likelihood[(y, i)] * belief.weights[i]);
    if post.iter().all(|w| *w == 0.0) {
        return Err(SacbpError::ContradictoryObservation);
    }
    Ok(CategoricalBelief { weights: post })
}
