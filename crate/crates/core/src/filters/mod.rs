//! Parametric Bayesian filters: the jump maps and belief flows of the shipped scenarios.

pub mod categorical;
pub mod ekf;
pub mod entropy;
pub mod gaussian;
pub mod kf1d;
pub mod ukf;

pub use categorical::{categorical_update, CategoricalBelief};
pub use ekf::{
    ekf_predict_continuous, ekf_predict_discrete, ekf_update, ekf_update_jvp, ekf_update_raw,
    ekf_update_vjp, moment_rhs, moment_rhs_jvp, moment_rhs_vjp, ContinuousSystem,
    MeasurementModel,
};
pub use entropy::gaussian_entropy_exp;
pub use gaussian::GaussianBelief;
pub use kf1d::kf1d_update;
pub use ukf::{
    brownian_predict, range_measurement, ukf_step, ukf_step_raw, unscented_predict, unscented_update, RangeNoise,
    UkfParams,
};

use nalgebra::DVector;

use crate::dynamics::ScenarioModel;
use crate::rng::SimRng;

/// Draws a latent state from the belief carried in `x_pre`, then a measurement of it under the
/// model's sensor noise.
pub fn sample_observation(
    model: &dyn ScenarioModel,
    x_pre: &DVector<f64>,
    rng: &mut SimRng,
) -> DVector<f64> {
    model.sample_observation(x_pre, rng)
}
