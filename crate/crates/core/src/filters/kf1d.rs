use crate::error::{invalid, Result};

/// Scalar Kalman update for `y = x + v`, `v ~ N(0, 1)`, written as
/// `((μ + s y)/(s + 1), s/(s + 1))`.
pub fn kf1d_update(mean: f64, var: f64, y: f64) -> Result<(f64, f64)> {
    if !(var > 0.0) {
        return Err(invalid("variance must be positive"));
    }
    let denom = var + 1.0;
    Ok(((mean + var * y) / denom, var / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_posterior() {
        assert_eq!(kf1d_update(0.0, 1.0, 2.0).unwrap(), (1.0, 0.5));
    }

    #[test]
    fn certainty_limit() {
        let (m, s) = kf1d_update(3.0, 1e-12, 100.0).unwrap();
        assert!((m - 3.0).abs() < 1e-9);
        assert!(s < 1e-11);
    }

    #[test]
    fn rejects_nonpositive_variance() {
        assert!(kf1d_update(0.0, 0.0, 1.0).is_err());
        assert!(kf1d_update(0.0, -1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn jump_norm_bound(mean in -1e3f64..1e3, var in 1e-6f64..1e3, y in -1e3f64..1e3) {
            let (m, s) = kf1d_update(mean, var, y).unwrap();
            let b = (mean * mean + var * var).sqrt();
            let post = (m * m + s * s).sqrt();
            prop_assert!(post <= 2f64.sqrt() * b + b * y.abs() + 1e-9 * (1.0 + b));
        }
    }
}
