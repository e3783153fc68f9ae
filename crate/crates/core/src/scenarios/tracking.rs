//! Range-only active tracking of independent Brownian targets by a single-integrator robot.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Scenario, World};
use crate::adjoint::jacobian_with;
use crate::dynamics::{BeliefStructure, ControlBox, ControlSchedule, Nominal, ScenarioModel};
use crate::error::{invalid, Result, SacbpError};
use crate::filters::{
    gaussian_entropy_exp, range_measurement, ukf_step, GaussianBelief, RangeNoise, UkfParams,
};
use crate::linalg::{min_eigenvalue, sample_gaussian};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

const BLOCK: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub n_targets: usize,
    /// Target Brownian covariance rate.
    pub q: [[f64; 2]; 2],
    pub r0: [[f64; 2]; 2],
    pub r1: [[f64; 2]; 2],
    /// Robot speed limit per axis.
    pub control_limit: f64,
    /// Running cost `w uᵀu`.
    pub control_cost_weight: f64,
    pub robot_start: [f64; 2],
    /// Targets are assigned round-robin to these cluster centers.
    pub clusters: Vec<[f64; 2]>,
    pub cluster_spread: f64,
    pub initial_variance: f64,
    pub layout_seed: u64,
    pub ukf: UkfParams,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            n_targets: 5,
            q: [[0.1, 0.0], [0.0, 0.1]],
            r0: [[0.01, 0.0], [0.0, 0.01]],
            r1: [[0.001, 0.0], [0.0, 0.001]],
            control_limit: 2.0,
            control_cost_weight: 0.05,
            robot_start: [0.0, 0.0],
            clusters: vec![[-4.0, 3.0], [4.0, -3.0]],
            cluster_spread: 1.0,
            initial_variance: 1.0,
            layout_seed: 7,
            ukf: UkfParams::default(),
        }
    }
}

fn mat2(m: &[[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if (m - m.transpose()).abs().max() > 1e-12 || min_eigenvalue(m) < -1e-12 {
        return Err(invalid(format!("{name} must be symmetric positive semidefinite")));
    }
    Ok(())
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_targets == 0 {
            return Err(invalid("tracking needs at least one target"));
        }
        if self.clusters.is_empty() {
            return Err(invalid("tracking needs at least one cluster"));
        }
        check_psd("q", &mat2(&self.q))?;
        check_psd("r0", &mat2(&self.r0))?;
        check_psd("r1", &mat2(&self.r1))?;
        if !(self.control_limit > 0.0) || !(self.control_cost_weight > 0.0) {
            return Err(invalid("control limit and cost weight must be positive"));
        }
        if !(self.initial_variance > 0.0) || self.cluster_spread < 0.0 {
            return Err(invalid("initial variance must be positive"));
        }
        Ok(())
    }

    /// Initial target means: cluster center plus a seeded Gaussian offset.
    pub fn target_means(&self) -> Vec<Vector2<f64>> {
        let mut rng = rng_from_seed(self.layout_seed);
        (0..self.n_targets)
            .map(|i| {
                let c = self.clusters[i % self.clusters.len()];
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                Vector2::new(c[0] + self.cluster_spread * dx, c[1] + self.cluster_spread * dy)
            })
            .collect()
    }
}

/// Mixed-observability tracking model. The state is `p ⊕ (μ_1, vec Σ_1) ⊕ …`; the flow moves only
/// the robot and each jump is a per-target UKF step over one observation interval.
#[derive(Clone, Debug)]
pub struct TrackingModel {
    cfg: TrackingConfig,
    noise: RangeNoise,
    dt_obs: f64,
    cu: DVector<f64>,
    bounds: ControlBox,
}

impl TrackingModel {
    pub fn new(cfg: TrackingConfig, dt_obs: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt_obs > 0.0) {
            return Err(invalid("observation interval must be positive"));
        }
        let noise = RangeNoise { q: mat2(&cfg.q), r0: mat2(&cfg.r0), r1: mat2(&cfg.r1) };
        let bounds = ControlBox::symmetric(2, cfg.control_limit)?;
        let cu = DVector::from_element(2, 2.0 * cfg.control_cost_weight);
        Ok(Self { cfg, noise, dt_obs, cu, bounds })
    }

    pub fn config(&self) -> &TrackingConfig {
        &self.cfg
    }

    pub fn noise(&self) -> &RangeNoise {
        &self.noise
    }

    pub fn n_targets(&self) -> usize {
        self.cfg.n_targets
    }

    pub fn initial_state(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.state_dim());
        x[0] = self.cfg.robot_start[0];
        x[1] = self.cfg.robot_start[1];
        let cov = DMatrix::identity(2, 2) * self.cfg.initial_variance;
        for (i, m) in self.cfg.target_means().iter().enumerate() {
            let b = GaussianBelief { mean: DVector::from_column_slice(m.as_slice()), cov: cov.clone() };
            b.pack_into(&mut x.as_mut_slice()[2 + BLOCK * i..2 + BLOCK * (i + 1)]);
        }
        x
    }

    pub fn robot(x: &DVector<f64>) -> Vector2<f64> {
        Vector2::new(x[0], x[1])
    }

    pub fn target_belief(&self, x: &DVector<f64>, i: usize) -> GaussianBelief {
        GaussianBelief::unpack(&x.as_slice()[2 + BLOCK * i..], 2)
    }

    /// `√det(2πeΣ_i)` for each target.
    pub fn entropies(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        (0..self.n_targets())
            .map(|i| Ok(gaussian_entropy_exp(&self.target_belief(x, i).cov)?.0))
            .collect()
    }

    fn block_update(&self, z: &DVector<f64>, y: f64) -> Result<DVector<f64>> {
        let robot = Vector2::new(z[0], z[1]);
        let b = GaussianBelief::unpack(&z.as_slice()[2..], 2);
        Ok(ukf_step(&b, &robot, Some(y), self.dt_obs, &self.noise, &self.cfg.ukf)?.pack())
    }

    fn block_input(x: &DVector<f64>, i: usize) -> DVector<f64> {
        let mut z = DVector::zeros(2 + BLOCK);
        z[0] = x[0];
        z[1] = x[1];
        z.rows_mut(2, BLOCK).copy_from(&x.rows(2 + BLOCK * i, BLOCK));
        z
    }
}

impl ScenarioModel for TrackingModel {
    fn structure(&self) -> BeliefStructure {
        BeliefStructure::Mixed { physical_dim: 2 }
    }
    fn state_dim(&self) -> usize {
        2 + BLOCK * self.cfg.n_targets
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn control_coefficient(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(x.len(), 2);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        h
    }
    fn flow_jacobian(&self, x: &DVector<f64>, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(x.len(), x.len()))
    }
    fn flow_vjp(&self, x: &DVector<f64>, _u: &DVector<f64>, _l: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(x.len()))
    }
    fn flow_jvp(&self, x: &DVector<f64>, _u: &DVector<f64>, _p: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(x.len()))
    }
    fn jump(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n_targets() {
            return Err(invalid("one range per target expected"));
        }
        let mut out = x.clone();
        for i in 0..self.n_targets() {
            let post = self.block_update(&Self::block_input(x, i), y[i])?;
            out.rows_mut(2 + BLOCK * i, BLOCK).copy_from(&post);
        }
        Ok(out)
    }
    fn jump_jacobian(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        for i in 0..self.n_targets() {
            let block = jacobian_with(|z| self.block_update(z, y[i]), &Self::block_input(x, i))?;
            let row = 2 + BLOCK * i;
            jac.view_mut((row, 0), (BLOCK, 2)).copy_from(&block.columns(0, 2));
            jac.view_mut((row, row), (BLOCK, BLOCK)).copy_from(&block.columns(2, BLOCK));
        }
        Ok(jac)
    }
    fn state_cost(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
    fn state_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        match self.entropies(x) {
            Ok(v) => v.iter().sum(),
            Err(_) => f64::NAN,
        }
    }
    fn terminal_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for i in 0..self.n_targets() {
            match gaussian_entropy_exp(&self.target_belief(x, i).cov) {
                Ok((_, grad)) => {
                    g.rows_mut(2 + BLOCK * i + 2, 4).copy_from_slice(grad.as_slice());
                }
                Err(_) => return DVector::from_element(x.len(), f64::NAN),
            }
        }
        g
    }
    fn control_cost_diag(&self) -> &DVector<f64> {
        &self.cu
    }
    fn control_box(&self) -> &ControlBox {
        &self.bounds
    }
    fn sample_observation(&self, x: &DVector<f64>, rng: &mut SimRng) -> DVector<f64> {
        let robot = Self::robot(x);
        DVector::from_fn(self.n_targets(), |i, _| {
            let b = self.target_belief(x, i);
            let cov = &b.cov + &self.noise.q * self.dt_obs;
            let target = sample_gaussian(&b.mean, &cov, rng);
            sample_range(&self.noise, &robot, target.as_slice(), rng)
        })
    }
    fn predicted_observation(&self, x: &DVector<f64>) -> DVector<f64> {
        let robot = Self::robot(x);
        DVector::from_fn(self.n_targets(), |i, _| {
            let m = self.target_belief(x, i).mean;
            range_measurement(&robot, m.as_slice(), &[0.0, 0.0])
        })
    }
}

/// A range from `robot` to a target at `target` with noise `v ~ N(0, R(p, q))` inside the norm.
pub fn sample_range(noise: &RangeNoise, robot: &Vector2<f64>, target: &[f64], rng: &mut SimRng) -> f64 {
    let r = noise.position_noise(robot, target);
    let v = sample_gaussian(&DVector::zeros(2), &r, rng);
    range_measurement(robot, target, v.as_slice())
}

/// Tracking scenario: planning model plus a ground-truth simulator.
pub struct TrackingScenario {
    model: Arc<TrackingModel>,
}

impl TrackingScenario {
    pub fn new(cfg: TrackingConfig, dt_obs: f64) -> Result<Self> {
        Ok(Self { model: Arc::new(TrackingModel::new(cfg, dt_obs)?) })
    }

    pub fn tracking_model(&self) -> &Arc<TrackingModel> {
        &self.model
    }
}

/// Make the tracking planning model.
pub fn make_tracking_scenario(cfg: TrackingConfig, dt_obs: f64) -> Result<TrackingModel> {
    TrackingModel::new(cfg, dt_obs)
}

impl Scenario for TrackingScenario {
    fn name(&self) -> &'static str {
        "tracking"
    }
    fn model(&self) -> &dyn ScenarioModel {
        self.model.as_ref()
    }
    fn initial_state(&self) -> DVector<f64> {
        self.model.initial_state()
    }
    fn base_nominal(&self, t0: f64, dt: f64, n_cells: usize) -> Result<Nominal> {
        Ok(Nominal::OpenLoop(ControlSchedule::zeros(t0, dt, n_cells, self.model.bounds.clone())?))
    }
    fn new_world(&self, seed: u64) -> Result<Box<dyn World>> {
        let mut rng = rng_from_seed(derive_seed(seed, u64::MAX, 0));
        let x = self.model.initial_state();
        let targets = (0..self.model.n_targets())
            .map(|i| {
                let b = self.model.target_belief(&x, i);
                Vector2::from_column_slice(sample_gaussian(&b.mean, &b.cov, &mut rng).as_slice())
            })
            .collect();
        Ok(Box::new(TrackingWorld { model: Arc::clone(&self.model), x, targets, rng }))
    }
    fn metric_names(&self) -> Vec<&'static str> {
        vec!["worst_entropy_exp"]
    }
}

/// Ground truth for tracking: targets diffuse with increments `N(0, Q Δt)` per step.
pub struct TrackingWorld {
    model: Arc<TrackingModel>,
    x: DVector<f64>,
    targets: Vec<Vector2<f64>>,
    rng: SimRng,
}

impl TrackingWorld {
    pub fn targets(&self) -> &[Vector2<f64>] {
        &self.targets
    }
}

impl World for TrackingWorld {
    fn agent_state(&self) -> &DVector<f64> {
        &self.x
    }
    fn advance(&mut self, u: &DVector<f64>, dt: f64) -> Result<()> {
        let dx = self.model.flow(&self.x, u) * dt;
        self.x += dx;
        let q = &self.model.noise.q * dt;
        for t in &mut self.targets {
            let w = sample_gaussian(&DVector::zeros(2), &q, &mut self.rng);
            t.x += w[0];
            t.y += w[1];
        }
        Ok(())
    }
    fn observe(&mut self) -> Result<()> {
        let robot = TrackingModel::robot(&self.x);
        let y = DVector::from_fn(self.targets.len(), |i, _| {
            sample_range(&self.model.noise, &robot, self.targets[i].as_slice(), &mut self.rng)
        });
        let next = self.model.jump(&self.x, &y)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SacbpError::NonFinite("tracking belief"));
        }
        self.x = next;
        Ok(())
    }
    fn metrics(&self) -> Result<Vec<(&'static str, f64)>> {
        let worst = self.model.entropies(&self.x)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
        Ok(vec![("worst_entropy_exp", worst)])
    }
}
