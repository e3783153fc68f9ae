use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integer_ratio, ScenarioModel};
use crate::error::{invalid, Result, SacbpError};
use crate::linalg::all_finite;

/// Backtracking rule for the greedy step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyParams {
    pub eta0: f64,
    pub max_halvings: usize,
}

impl Default for GreedyParams {
    fn default() -> Self {
        Self { eta0: 1.0, max_halvings: 10 }
    }
}

/// One observation interval of flow under a constant control followed by the filter update at
/// `y`: returns the pre-jump path and the post-jump state.
fn interval(
    model: &dyn ScenarioModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    steps: usize,
    y: Option<&DVector<f64>>,
) -> Result<(Vec<DVector<f64>>, DVector<f64>, DVector<f64>)> {
    let mut path = Vec::with_capacity(steps + 1);
    let mut z = x.clone();
    path.push(z.clone());
    for _ in 0..steps {
        z += model.flow(&z, u) * dt;
        if !all_finite(&z) {
            return Err(SacbpError::NonFinite("greedy lookahead"));
        }
        path.push(z.clone());
    }
    let y = match y {
        Some(y) => y.clone(),
        None => model.predicted_observation(&z),
    };
    let post = model.jump(&z, &y)?;
    Ok((path, post, y))
}

/// Terminal cost after one interval under constant `u`, with the observation fixed at `y`.
pub fn greedy_objective(
    model: &dyn ScenarioModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt_ctrl: f64,
    dt_obs: f64,
    y: &DVector<f64>,
) -> Result<f64> {
    let steps = steps(dt_ctrl, dt_obs)?;
    let (_, post, _) = interval(model, x, u, dt_ctrl, steps, Some(y))?;
    Ok(model.terminal_cost(&post))
}

fn steps(dt_ctrl: f64, dt_obs: f64) -> Result<usize> {
    integer_ratio(dt_obs, dt_ctrl)
        .filter(|&s| s > 0)
        .ok_or_else(|| invalid("observation interval is not a multiple of the control step"))
}

/// Gradient of the terminal cost after one interval with respect to a constant control at
/// `u = 0`, by reverse mode through the Euler steps and the filter update. The observation is
/// the noise-free prediction at the `u = 0` pre-jump state and is held fixed. Returns
/// `(objective at 0, gradient, observation)`.
pub fn greedy_gradient(
    model: &dyn ScenarioModel,
    x: &DVector<f64>,
    dt_ctrl: f64,
    dt_obs: f64,
) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let steps = steps(dt_ctrl, dt_obs)?;
    let u0 = DVector::zeros(model.control_dim());
    let (path, post, y) = interval(model, x, &u0, dt_ctrl, steps, None)?;
    let pre = &path[steps];
    let mut lambda = model.jump_vjp(pre, &y, &model.terminal_cost_gradient(&post))?;
    let mut grad = DVector::zeros(model.control_dim());
    for j in (0..steps).rev() {
        let xj = &path[j];
        grad += model.control_coefficient(xj).transpose() * &lambda * dt_ctrl;
        lambda += model.flow_vjp(xj, &u0, &lambda)? * dt_ctrl;
    }
    if !all_finite(&grad) {
        return Err(SacbpError::NonFinite("greedy gradient"));
    }
    Ok((model.terminal_cost(&post), grad, y))
}

/// Greedy descent on the terminal cost one observation ahead: `u = clamp(-η ∇)` with `η`
/// halved from `eta0` until the objective decreases, or zero if it never does.
pub fn greedy_control(
    model: &dyn ScenarioModel,
    x: &DVector<f64>,
    dt_ctrl: f64,
    dt_obs: f64,
    params: &GreedyParams,
) -> Result<DVector<f64>> {
    let (phi0, grad, y) = greedy_gradient(model, x, dt_ctrl, dt_obs)?;
    let zero = DVector::zeros(model.control_dim());
    if grad.iter().all(|g| *g == 0.0) {
        return Ok(zero);
    }
    let mut eta = params.eta0;
    for _ in 0..=params.max_halvings {
        let u = model.control_box().clamp(&(-eta * &grad));
        if let Ok(phi) = greedy_objective(model, x, &u, dt_ctrl, dt_obs, &y) {
            if phi < phi0 {
                return Ok(u);
            }
        }
        eta *= 0.5;
    }
    Ok(zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{ScalarTargetConfig, ScalarTargetModel, TrackingConfig, TrackingModel};

    #[test]
    fn stationary_point_gives_zero() {
        let cfg = ScalarTargetConfig {
            a: 0.0,
            r1: 0.0,
            terminal_p: 0.0,
            terminal_mean: 0.0,
            ..Default::default()
        };
        let model = ScalarTargetModel::new(cfg).unwrap();
        let u = greedy_control(&model, &model.initial_state(), 0.01, 0.5, &GreedyParams::default()).unwrap();
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn moves_downhill() {
        // h decreasing in p for p < 0
        let cfg = ScalarTargetConfig {
            a: 0.0,
            r1: 0.0,
            terminal_var: 0.0,
            terminal_mean: 0.0,
            initial: [-1.0, 0.0, 1.0],
            ..Default::default()
        };
        let model = ScalarTargetModel::new(cfg).unwrap();
        let u = greedy_control(&model, &model.initial_state(), 0.01, 0.5, &GreedyParams::default()).unwrap();
        assert!(u[0] > 0.0);
    }

    #[test]
    fn tracking_gradient_matches_differences() {
        let cfg = TrackingConfig { n_targets: 2, ..Default::default() };
        let model = TrackingModel::new(cfg, 0.2).unwrap();
        let mut x = model.initial_state();
        x[0] = -2.0;
        x[1] = 1.0;
        let (_, grad, y) = greedy_gradient(&model, &x, 0.01, 0.2).unwrap();
        for i in 0..2 {
            let h = 1e-4;
            let mut up = DVector::zeros(2);
            up[i] = h;
            let f = |u: &DVector<f64>| greedy_objective(&model, &x, u, 0.01, 0.2, &y).unwrap();
            let fd = (f(&up) - f(&-up.clone())) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-4 * grad.norm(), "{i}: {fd} vs {}", grad[i]);
        }
    }
}
