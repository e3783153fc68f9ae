//! Small linear-Gaussian models with exact Kalman-filter oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::belief::EkfBeliefModel;
use crate::dynamics::{BeliefStructure, ControlBox, ScenarioModel};
use crate::error::{invalid, Result};
use crate::filters::{ContinuousSystem, MeasurementModel};
use crate::rng::{rng_from_seed, SimRng};

/// `ẋ = A x + B u + w`, `y = C x + v`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ContinuousSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn control_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }
    fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn control_column_jacobian(&self, x: &DVector<f64>, _l: usize) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
    fn state_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

impl MeasurementModel for LinearSystem {
    fn measurement_dim(&self) -> usize {
        self.c.nrows()
    }
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.r
    }
    fn measurement_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.c.clone()
    }
}

/// A random stable linear system of dimension `dim` (symmetric part of `A` negative definite)
/// with two controls, a full-rank sensor and quadratic costs, wrapped as an EKF belief model.
pub fn make_linear_fixture(dim: usize, seed: u64) -> Result<EkfBeliefModel<LinearSystem>> {
    if dim == 0 {
        return Err(invalid("fixture dimension must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let mut normal = |r: usize, c: usize| {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let k = normal(dim, dim);
    let skew = (&k - k.transpose()) * 0.5;
    let damping = DMatrix::from_diagonal(&DVector::from_fn(dim, |i, _| 0.5 + i as f64 / dim as f64));
    let a = skew - damping;
    let m = dim.min(2);
    let b = normal(dim, m);
    let c = DMatrix::identity(dim, dim) + normal(dim, dim) * 0.3;
    let sys = LinearSystem {
        a,
        b,
        c,
        q: DMatrix::identity(dim, dim) * 0.05,
        r: DMatrix::identity(dim, dim) * 0.1,
    };
    EkfBeliefModel::new(
        sys,
        DMatrix::identity(dim, dim),
        DVector::from_element(m, 0.5),
        ControlBox::symmetric(m, 5.0)?,
    )
}

/// Parameters of the scalar mixed-observability fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarTargetConfig {
    /// Robot flow `ṗ = a p + u`.
    pub a: f64,
    /// Target diffusion rate.
    pub q: f64,
    /// Measurement noise variance `r0 + r1 p²` for `y = target + v`.
    pub r0: f64,
    pub r1: f64,
    pub dt_obs: f64,
    pub cost_p: f64,
    pub cost_var: f64,
    pub cost_u: f64,
    pub terminal_p: f64,
    pub terminal_var: f64,
    pub terminal_mean: f64,
    pub control_limit: f64,
    pub initial: [f64; 3],
}

impl Default for ScalarTargetConfig {
    fn default() -> Self {
        Self {
            a: -0.3,
            q: 0.2,
            r0: 0.5,
            r1: 0.4,
            dt_obs: 0.5,
            cost_p: 0.2,
            cost_var: 0.5,
            cost_u: 0.4,
            terminal_p: 0.3,
            terminal_var: 2.0,
            terminal_mean: 0.1,
            control_limit: 3.0,
            initial: [1.0, 0.5, 1.5],
        }
    }
}

/// One-dimensional mixed-observability fixture: a robot at `p` with `ṗ = a p + u` observes a
/// diffusing scalar target `y = q + v` whose noise variance grows with `p²`. The augmented state
/// is `(p, μ, s)`; the jump is the exact Kalman predict-update over one observation interval.
#[derive(Clone, Debug)]
pub struct ScalarTargetModel {
    cfg: ScalarTargetConfig,
    cu: DVector<f64>,
    bounds: ControlBox,
}

impl ScalarTargetModel {
    pub fn new(cfg: ScalarTargetConfig) -> Result<Self> {
        if !(cfg.cost_u > 0.0) || !(cfg.r0 > 0.0) || cfg.r1 < 0.0 || cfg.q < 0.0 {
            return Err(invalid("scalar fixture needs cost_u > 0, r0 > 0, r1 >= 0, q >= 0"));
        }
        if !(cfg.initial[2] > 0.0) || !(cfg.dt_obs > 0.0) {
            return Err(invalid("scalar fixture needs a positive initial variance and dt_obs"));
        }
        let bounds = ControlBox::symmetric(1, cfg.control_limit)?;
        Ok(Self { cu: DVector::from_element(1, cfg.cost_u), bounds, cfg })
    }

    pub fn config(&self) -> &ScalarTargetConfig {
        &self.cfg
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.cfg.initial)
    }

    pub fn noise_var(&self, p: f64) -> f64 {
        self.cfg.r0 + self.cfg.r1 * p * p
    }

    pub fn predicted_var(&self, s: f64) -> f64 {
        s + self.cfg.q * self.cfg.dt_obs
    }
}

impl ScenarioModel for ScalarTargetModel {
    fn structure(&self) -> BeliefStructure {
        BeliefStructure::Mixed { physical_dim: 1 }
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![self.cfg.a * x[0], 0.0, 0.0])
    }
    fn control_coefficient(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_vec(3, 1, vec![1.0, 0.0, 0.0])
    }
    fn flow_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 0)] = self.cfg.a;
        Ok(j)
    }
    fn jump(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let sp = self.predicted_var(x[2]);
        if !(sp > 0.0) {
            return Err(invalid("scalar fixture variance must stay positive"));
        }
        let r = self.noise_var(x[0]);
        let k = sp / (sp + r);
        Ok(DVector::from_vec(vec![x[0], x[1] + k * (y[0] - x[1]), sp * r / (sp + r)]))
    }
    fn jump_jacobian(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (p, mu) = (x[0], x[1]);
        let sp = self.predicted_var(x[2]);
        let r = self.noise_var(p);
        let d = sp + r;
        let dr_dp = 2.0 * self.cfg.r1 * p;
        let innov = y[0] - mu;
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 0)] = 1.0;
        j[(1, 0)] = -innov * sp / (d * d) * dr_dp;
        j[(1, 1)] = 1.0 - sp / d;
        j[(1, 2)] = innov * r / (d * d);
        j[(2, 0)] = sp * sp / (d * d) * dr_dp;
        j[(2, 2)] = r * r / (d * d);
        Ok(j)
    }
    fn state_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.cfg.cost_p * x[0] * x[0] + 0.5 * self.cfg.cost_var * x[2]
    }
    fn state_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![self.cfg.cost_p * x[0], 0.0, 0.5 * self.cfg.cost_var])
    }
    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.cfg.terminal_p * x[0] * x[0]
            + self.cfg.terminal_var * x[2]
            + 0.5 * self.cfg.terminal_mean * x[1] * x[1]
    }
    fn terminal_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            self.cfg.terminal_p * x[0],
            self.cfg.terminal_mean * x[1],
            self.cfg.terminal_var,
        ])
    }
    fn control_cost_diag(&self) -> &DVector<f64> {
        &self.cu
    }
    fn control_box(&self) -> &ControlBox {
        &self.bounds
    }
    fn sample_observation(&self, x: &DVector<f64>, rng: &mut SimRng) -> DVector<f64> {
        let sp = self.predicted_var(x[2]).max(0.0);
        let target = x[1] + sp.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let noise = self.noise_var(x[0]).sqrt() * rng.sample::<f64, _>(StandardNormal);
        DVector::from_element(1, target + noise)
    }
    fn predicted_observation(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[1])
    }
}
