//! Planar manipulation of a rigid object with unknown mass, inertia, moment arm and friction.
//!
//! The latent state is `(r_x, r_y, θ, v_x, v_y, ω, log m, log I, a_x, a_y, log c)`. The robot is
//! rigidly attached at the body-frame offset `a` and applies a force `F` and torque `M`:
//! `v̇ = (F - c v)/m`, `ω̇ = (M + (R(θ)a) × F)/I`. Its pose and velocity sensors report the
//! attachment point's position and velocity, the heading and the angular rate in the global frame.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::belief::EkfBeliefModel;
use super::{Scenario, World};
use crate::baselines::{PositionController, PositionGains};
use crate::dynamics::{ControlBox, Nominal, Policy, PolicySchedule, ScenarioModel};
use crate::error::{invalid, Result, SacbpError};
use crate::filters::{ContinuousSystem, GaussianBelief, MeasurementModel};
use crate::linalg::{all_finite, sample_gaussian};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

pub const LATENT_DIM: usize = 11;
pub const MEASUREMENT_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManipulationConfig {
    pub mass: f64,
    pub inertia: f64,
    pub arm: [f64; 2],
    pub friction: f64,
    /// True initial `(r_x, r_y, θ, v_x, v_y, ω)`.
    pub initial_state: [f64; 6],
    /// Initial belief mean of `(r_x, r_y, θ, v_x, v_y, ω)`.
    pub initial_state_guess: [f64; 6],
    pub mass_guess: f64,
    pub inertia_guess: f64,
    pub arm_guess: [f64; 2],
    pub friction_guess: f64,
    /// Initial belief standard deviations over the latent coordinates (log-space for the
    /// positive parameters).
    pub initial_std: [f64; LATENT_DIM],
    pub position_noise_std: f64,
    pub heading_noise_std: f64,
    pub velocity_noise_std: f64,
    pub angular_rate_noise_std: f64,
    /// Process noise rates for pose and velocities assumed by the filter.
    pub pose_process_noise: f64,
    pub velocity_process_noise: f64,
    /// Velocity process noise rate of the simulated ground truth. The filter's rate is kept
    /// larger so its Euler covariance step stays positive definite under saturated forces.
    pub true_velocity_process_noise: f64,
    /// Diagonal of `C_x` over `(r, θ, v, ω)`; parameters carry no cost.
    pub state_cost: [f64; 6],
    pub control_cost: [f64; 3],
    pub force_limit: f64,
    pub torque_limit: f64,
    pub gains: PositionGains,
}

impl Default for ManipulationConfig {
    fn default() -> Self {
        Self {
            mass: 2.0,
            inertia: 0.5,
            arm: [0.3, 0.2],
            friction: 0.5,
            initial_state: [2.0, -1.5, 0.6, 0.0, 0.0, 0.0],
            initial_state_guess: [2.2, -1.7, 0.5, 0.0, 0.0, 0.0],
            mass_guess: 1.5,
            inertia_guess: 0.7,
            arm_guess: [0.1, 0.1],
            friction_guess: 0.8,
            initial_std: [0.3, 0.3, 0.1, 0.1, 0.1, 0.1, 0.3, 0.3, 0.2, 0.2, 0.3],
            position_noise_std: 0.05,
            heading_noise_std: 0.02,
            velocity_noise_std: 0.05,
            angular_rate_noise_std: 0.05,
            pose_process_noise: 1e-4,
            velocity_process_noise: 0.03,
            true_velocity_process_noise: 1e-3,
            state_cost: [10.0, 10.0, 1.0, 1.0, 1.0, 1.0],
            control_cost: [0.2, 0.2, 0.2],
            force_limit: 5.0,
            torque_limit: 2.0,
            gains: PositionGains::default(),
        }
    }
}

impl ManipulationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.mass,
            self.inertia,
            self.friction,
            self.mass_guess,
            self.inertia_guess,
            self.friction_guess,
            self.position_noise_std,
            self.heading_noise_std,
            self.velocity_noise_std,
            self.angular_rate_noise_std,
            self.force_limit,
            self.torque_limit,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("physical parameters, noise levels and limits must be positive"));
        }
        if self.initial_std.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("initial belief standard deviations must be positive"));
        }
        if self.state_cost.iter().any(|c| *c < 0.0) || self.control_cost.iter().any(|c| !(*c > 0.0)) {
            return Err(invalid("state cost must be nonnegative and control cost positive"));
        }
        if self.pose_process_noise < 0.0 || self.velocity_process_noise < 0.0 || self.true_velocity_process_noise < 0.0 {
            return Err(invalid("process noise must be nonnegative"));
        }
        Ok(())
    }

    /// Ground-truth process noise covariance rate.
    pub fn true_process_noise(&self) -> DMatrix<f64> {
        let mut q = DVector::zeros(LATENT_DIM);
        for i in 0..3 {
            q[i] = self.pose_process_noise;
            q[i + 3] = self.true_velocity_process_noise;
        }
        DMatrix::from_diagonal(&q)
    }

    pub fn true_state(&self) -> DVector<f64> {
        let s = &self.initial_state;
        DVector::from_vec(vec![
            s[0],
            s[1],
            s[2],
            s[3],
            s[4],
            s[5],
            self.mass.ln(),
            self.inertia.ln(),
            self.arm[0],
            self.arm[1],
            self.friction.ln(),
        ])
    }

    pub fn initial_belief(&self) -> GaussianBelief {
        let s = &self.initial_state_guess;
        let mean = DVector::from_vec(vec![
            s[0],
            s[1],
            s[2],
            s[3],
            s[4],
            s[5],
            self.mass_guess.ln(),
            self.inertia_guess.ln(),
            self.arm_guess[0],
            self.arm_guess[1],
            self.friction_guess.ln(),
        ]);
        let var = DVector::from_iterator(LATENT_DIM, self.initial_std.iter().map(|s| s * s));
        GaussianBelief { mean, cov: DMatrix::from_diagonal(&var) }
    }
}

/// Rigid-body dynamics and sensors of the manipulated object.
#[derive(Clone, Debug)]
pub struct PlanarObject {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

/// World-frame arm `R(θ) a`.
pub fn world_arm(x: &DVector<f64>) -> (f64, f64) {
    let (s, c) = x[2].sin_cos();
    (c * x[8] - s * x[9], s * x[8] + c * x[9])
}

impl PlanarObject {
    pub fn new(cfg: &ManipulationConfig) -> Self {
        let mut q = DVector::zeros(LATENT_DIM);
        for i in 0..3 {
            q[i] = cfg.pose_process_noise;
            q[i + 3] = cfg.velocity_process_noise;
        }
        let r = DVector::from_vec(vec![
            cfg.position_noise_std.powi(2),
            cfg.position_noise_std.powi(2),
            cfg.heading_noise_std.powi(2),
            cfg.velocity_noise_std.powi(2),
            cfg.velocity_noise_std.powi(2),
            cfg.angular_rate_noise_std.powi(2),
        ]);
        Self { q: DMatrix::from_diagonal(&q), r: DMatrix::from_diagonal(&r) }
    }
}

impl ContinuousSystem for PlanarObject {
    fn state_dim(&self) -> usize {
        LATENT_DIM
    }
    fn control_dim(&self) -> usize {
        3
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let inv_m = (-x[6]).exp();
        let c = x[10].exp();
        let mut f = DVector::zeros(LATENT_DIM);
        f[0] = x[3];
        f[1] = x[4];
        f[2] = x[5];
        f[3] = -c * x[3] * inv_m;
        f[4] = -c * x[4] * inv_m;
        f
    }
    fn control_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let inv_m = (-x[6]).exp();
        let inv_i = (-x[7]).exp();
        let (ax, ay) = world_arm(x);
        let mut b = DMatrix::zeros(LATENT_DIM, 3);
        b[(3, 0)] = inv_m;
        b[(4, 1)] = inv_m;
        b[(5, 0)] = -ay * inv_i;
        b[(5, 1)] = ax * inv_i;
        b[(5, 2)] = inv_i;
        b
    }
    fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.state_jacobian(x, &DVector::zeros(3))
    }
    fn control_column_jacobian(&self, x: &DVector<f64>, l: usize) -> DMatrix<f64> {
        let e = DVector::from_fn(3, |k, _| if k == l { 1.0 } else { 0.0 });
        self.state_jacobian(x, &e) - self.state_jacobian(x, &DVector::zeros(3))
    }
    fn state_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let inv_m = (-x[6]).exp();
        let inv_i = (-x[7]).exp();
        let c = x[10].exp();
        let (s, co) = x[2].sin_cos();
        let (ax, ay) = world_arm(x);
        let (fx, fy, m) = (u[0], u[1], u[2]);
        let mut a = DMatrix::zeros(LATENT_DIM, LATENT_DIM);
        a[(0, 3)] = 1.0;
        a[(1, 4)] = 1.0;
        a[(2, 5)] = 1.0;
        for (row, vel, force) in [(3, x[3], fx), (4, x[4], fy)] {
            a[(row, row)] = -c * inv_m;
            a[(row, 6)] = -(force - c * vel) * inv_m;
            a[(row, 10)] = -c * vel * inv_m;
        }
        let omega_dot = (m + ax * fy - ay * fx) * inv_i;
        a[(5, 2)] = (-ay * fy - ax * fx) * inv_i;
        a[(5, 7)] = -omega_dot;
        a[(5, 8)] = (co * fy - s * fx) * inv_i;
        a[(5, 9)] = (-s * fy - co * fx) * inv_i;
        a
    }
}

impl MeasurementModel for PlanarObject {
    fn measurement_dim(&self) -> usize {
        MEASUREMENT_DIM
    }
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        let (ax, ay) = world_arm(x);
        DVector::from_vec(vec![
            x[0] + ax,
            x[1] + ay,
            x[2],
            x[3] - x[5] * ay,
            x[4] + x[5] * ax,
            x[5],
        ])
    }
    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.r
    }
    fn measurement_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let (ax, ay) = world_arm(x);
        let w = x[5];
        let mut j = DMatrix::zeros(MEASUREMENT_DIM, LATENT_DIM);
        j[(0, 0)] = 1.0;
        j[(0, 2)] = -ay;
        j[(0, 8)] = c;
        j[(0, 9)] = -s;
        j[(1, 1)] = 1.0;
        j[(1, 2)] = ax;
        j[(1, 8)] = s;
        j[(1, 9)] = c;
        j[(2, 2)] = 1.0;
        j[(3, 3)] = 1.0;
        j[(3, 2)] = -w * ax;
        j[(3, 5)] = -ay;
        j[(3, 8)] = -w * s;
        j[(3, 9)] = -w * c;
        j[(4, 4)] = 1.0;
        j[(4, 2)] = -w * ay;
        j[(4, 5)] = ax;
        j[(4, 8)] = w * c;
        j[(4, 9)] = -w * s;
        j[(5, 5)] = 1.0;
        j
    }
}

pub type ManipulationModel = EkfBeliefModel<PlanarObject>;

/// Make the manipulation belief model.
pub fn make_manipulation_scenario(cfg: &ManipulationConfig) -> Result<ManipulationModel> {
    cfg.validate()?;
    let mut cx = DVector::zeros(LATENT_DIM);
    cx.rows_mut(0, 6).copy_from_slice(&cfg.state_cost);
    let bounds = ControlBox::new(
        DVector::from_vec(vec![-cfg.force_limit, -cfg.force_limit, -cfg.torque_limit]),
        DVector::from_vec(vec![cfg.force_limit, cfg.force_limit, cfg.torque_limit]),
    )?;
    EkfBeliefModel::new(
        PlanarObject::new(cfg),
        DMatrix::from_diagonal(&cx),
        DVector::from_column_slice(&cfg.control_cost),
        bounds,
    )
}

/// Residual `‖(r, θ, v, ω)‖` of a latent state.
pub fn residual_norm(x: &DVector<f64>) -> f64 {
    x.rows(0, 6).norm()
}

pub struct ManipulationScenario {
    cfg: ManipulationConfig,
    model: Arc<ManipulationModel>,
    controller: Arc<PositionController>,
}

impl ManipulationScenario {
    pub fn new(cfg: ManipulationConfig) -> Result<Self> {
        let model = Arc::new(make_manipulation_scenario(&cfg)?);
        let controller = Arc::new(PositionController::new(cfg.gains.clone(), model.control_box().clone()));
        Ok(Self { cfg, model, controller })
    }

    pub fn manipulation_model(&self) -> &Arc<ManipulationModel> {
        &self.model
    }

    pub fn controller(&self) -> &Arc<PositionController> {
        &self.controller
    }
}

impl Scenario for ManipulationScenario {
    fn name(&self) -> &'static str {
        "manipulation"
    }
    fn model(&self) -> &dyn ScenarioModel {
        self.model.as_ref()
    }
    fn initial_state(&self) -> DVector<f64> {
        self.cfg.initial_belief().pack()
    }
    fn base_nominal(&self, t0: f64, dt: f64, n_cells: usize) -> Result<Nominal> {
        let policy: Arc<dyn Policy> = self.controller.clone();
        Ok(Nominal::ClosedLoop(PolicySchedule::new(
            policy,
            t0,
            dt,
            n_cells,
            self.model.control_box().clone(),
        )?))
    }
    fn rollout_policy(&self) -> Option<Arc<dyn Policy>> {
        Some(self.controller.clone())
    }
    fn new_world(&self, seed: u64) -> Result<Box<dyn World>> {
        Ok(Box::new(ManipulationWorld {
            model: Arc::clone(&self.model),
            process_noise: self.cfg.true_process_noise(),
            truth: self.cfg.true_state(),
            x: self.initial_state(),
            rng: rng_from_seed(derive_seed(seed, u64::MAX, 1)),
        }))
    }
    fn metric_names(&self) -> Vec<&'static str> {
        vec!["residual_norm"]
    }
}

/// Ground truth: the same rigid-body dynamics at the true parameters, with process noise
/// `N(0, Q_true Δt)` per step.
pub struct ManipulationWorld {
    model: Arc<ManipulationModel>,
    process_noise: DMatrix<f64>,
    truth: DVector<f64>,
    x: DVector<f64>,
    rng: SimRng,
}

impl ManipulationWorld {
    pub fn truth(&self) -> &DVector<f64> {
        &self.truth
    }
}

impl World for ManipulationWorld {
    fn agent_state(&self) -> &DVector<f64> {
        &self.x
    }
    fn advance(&mut self, u: &DVector<f64>, dt: f64) -> Result<()> {
        let sys = self.model.system();
        let w = sample_gaussian(&DVector::zeros(LATENT_DIM), &(&self.process_noise * dt), &mut self.rng);
        self.truth += sys.dynamics(&self.truth, u) * dt + w;
        let dx = self.model.flow(&self.x, u) * dt;
        self.x += dx;
        if !all_finite(&self.truth) || !all_finite(&self.x) {
            return Err(SacbpError::NonFinite("manipulation state"));
        }
        Ok(())
    }
    fn observe(&mut self) -> Result<()> {
        let sys = self.model.system();
        let r = sys.measurement_noise();
        let y = sys.measure(&self.truth) + sample_gaussian(&DVector::zeros(r.nrows()), r, &mut self.rng);
        self.x = self.model.jump(&self.x, &y)?;
        Ok(())
    }
    fn metrics(&self) -> Result<Vec<(&'static str, f64)>> {
        Ok(vec![("residual_norm", residual_norm(&self.truth))])
    }
}
