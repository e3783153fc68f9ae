use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::gaussian::GaussianBelief;
use crate::error::{invalid, Result, SacbpError};
use crate::linalg::{psd_sqrt, repair_pd, symmetrize, symmetrized};

/// Sigma-point spread parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0, kappa: 0.0 }
    }
}

/// Unscented measurement update with the noise appended to the sigma-point state.
/// `measure(x, v)` maps a state sample and a noise sample to a measurement.
/// Returns the symmetrized posterior without PD repair.
pub fn unscented_update<F>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
    measure: F,
    y: &DVector<f64>,
    params: &UkfParams,
) -> Result<GaussianBelief>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let n = mean.len();
    let nv = noise_cov.nrows();
    let na = n + nv;
    let lambda = params.alpha * params.alpha * (na as f64 + params.kappa) - na as f64;
    let scale = na as f64 + lambda;
    if !(scale > 0.0) {
        return Err(invalid("sigma-point spread must be positive"));
    }
    let mut pa = DMatrix::zeros(na, na);
    pa.view_mut((0, 0), (n, n)).copy_from(&symmetrized(cov));
    pa.view_mut((n, n), (nv, nv)).copy_from(noise_cov);
    let root = psd_sqrt(&(pa * scale));

    let wm0 = lambda / scale;
    let wc0 = wm0 + 1.0 - params.alpha * params.alpha + params.beta;
    let wi = 0.5 / scale;

    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(2 * na + 1);
    let mut ys: Vec<DVector<f64>> = Vec::with_capacity(2 * na + 1);
    let mut push = |delta: Option<(usize, f64)>| {
        let mut za = DVector::zeros(na);
        za.rows_mut(0, n).copy_from(mean);
        if let Some((j, sign)) = delta {
            za += root.column(j) * sign;
        }
        let x = za.rows(0, n).into_owned();
        let v = za.rows(n, nv).into_owned();
        ys.push(measure(&x, &v));
        xs.push(x);
    };
    push(None);
    for j in 0..na {
        push(Some((j, 1.0)));
        push(Some((j, -1.0)));
    }
    let m = ys[0].len();
    if y.len() != m {
        return Err(invalid("observation has the wrong dimension"));
    }
    let weight = |i: usize, w0: f64| if i == 0 { w0 } else { wi };

    let mut y_hat = DVector::zeros(m);
    for (i, yi) in ys.iter().enumerate() {
        y_hat += yi * weight(i, wm0);
    }
    let mut s = DMatrix::zeros(m, m);
    let mut cxy = DMatrix::zeros(n, m);
    for (i, (xi, yi)) in xs.iter().zip(&ys).enumerate() {
        let dy = yi - &y_hat;
        let dx = xi - mean;
        let w = weight(i, wc0);
        s += &dy * dy.transpose() * w;
        cxy += dx * dy.transpose() * w;
    }
    symmetrize(&mut s);
    let chol = s.clone().cholesky().ok_or(SacbpError::SingularInnovation)?;
    let gain = chol.solve(&cxy.transpose()).transpose();
    let post_mean = mean + &gain * (y - y_hat);
    let mut post_cov = cov - &gain * s * gain.transpose();
    symmetrize(&mut post_cov);
    GaussianBelief::new(post_mean, post_cov)
}

/// Unscented predict through a deterministic transition with additive noise `q`.
pub fn unscented_predict<F>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    transition: F,
    q: &DMatrix<f64>,
    params: &UkfParams,
) -> Result<GaussianBelief>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = mean.len();
    let lambda = params.alpha * params.alpha * (n as f64 + params.kappa) - n as f64;
    let scale = n as f64 + lambda;
    if !(scale > 0.0) {
        return Err(invalid("sigma-point spread must be positive"));
    }
    let root = psd_sqrt(&(symmetrized(cov) * scale));
    let wm0 = lambda / scale;
    let wc0 = wm0 + 1.0 - params.alpha * params.alpha + params.beta;
    let wi = 0.5 / scale;
    let mut pts = vec![transition(mean)];
    for j in 0..n {
        pts.push(transition(&(mean + root.column(j))));
        pts.push(transition(&(mean - root.column(j))));
    }
    let weight = |i: usize, w0: f64| if i == 0 { w0 } else { wi };
    let mut m = DVector::zeros(pts[0].len());
    for (i, x) in pts.iter().enumerate() {
        m += x * weight(i, wm0);
    }
    let mut c = q.clone();
    for (i, x) in pts.iter().enumerate() {
        let d = x - &m;
        c += &d * d.transpose() * weight(i, wc0);
    }
    symmetrize(&mut c);
    GaussianBelief::new(m, c)
}

/// Range-sensor noise: target Brownian covariance rate `q` and `R(p, μ) = R0 + ‖μ - p‖ R1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeNoise {
    pub q: DMatrix<f64>,
    pub r0: DMatrix<f64>,
    pub r1: DMatrix<f64>,
}

impl RangeNoise {
    pub fn position_noise(&self, robot: &Vector2<f64>, target: &[f64]) -> DMatrix<f64> {
        let d = ((target[0] - robot.x).powi(2) + (target[1] - robot.y).powi(2)).sqrt();
        &self.r0 + &self.r1 * d
    }
}

/// Range `‖q - p + v‖`.
pub fn range_measurement(robot: &Vector2<f64>, target: &[f64], noise: &[f64]) -> f64 {
    let dx = target[0] - robot.x + noise[0];
    let dy = target[1] - robot.y + noise[1];
    (dx * dx + dy * dy).sqrt()
}

/// Brownian predict: the mean is unchanged and `Q dt` is added to the covariance.
pub fn brownian_predict(belief: &GaussianBelief, q: &DMatrix<f64>, dt: f64) -> GaussianBelief {
    GaussianBelief { mean: belief.mean.clone(), cov: &belief.cov + q * dt }
}

/// One tracking filter step for a single target: Brownian predict over `dt`, then (if a range
/// was observed) an unscented update using the approximate noise covariance at the mean.
pub fn ukf_step(
    belief: &GaussianBelief,
    robot: &Vector2<f64>,
    observation: Option<f64>,
    dt: f64,
    noise: &RangeNoise,
    params: &UkfParams,
) -> Result<GaussianBelief> {
    let predicted = ukf_step_raw(belief, robot, observation, dt, noise, params)?;
    let cov = repair_pd(predicted.cov)?;
    GaussianBelief::new(predicted.mean, cov)
}

/// [`ukf_step`] without the final PD repair (the smooth map differentiated by the planner).
pub fn ukf_step_raw(
    belief: &GaussianBelief,
    robot: &Vector2<f64>,
    observation: Option<f64>,
    dt: f64,
    noise: &RangeNoise,
    params: &UkfParams,
) -> Result<GaussianBelief> {
    if belief.dim() != 2 {
        return Err(invalid("range tracking beliefs are two-dimensional"));
    }
    let mut prior = brownian_predict(belief, &noise.q, dt);
    prior.symmetrize();
    let Some(y) = observation else {
        return Ok(prior);
    };
    let r = noise.position_noise(robot, prior.mean.as_slice());
    unscented_update(
        &prior.mean,
        &prior.cov,
        &r,
        |x, v| DVector::from_element(1, range_measurement(robot, x.as_slice(), v.as_slice())),
        &DVector::from_element(1, y),
        params,
    )
}
