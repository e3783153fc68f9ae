use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::adjoint::{adjoint_backward, cost_variation_adjoint, cost_variation_forward, max_relative_drift, variational_forward};
use crate::dynamics::{simulate_nominal, ControlBox, ControlSchedule, Nominal, ScenarioModel, TimeGrid};
use crate::error::{Result, SacbpError};
use crate::filters::{
    categorical_update, ekf_predict_continuous, ekf_predict_discrete, ekf_update_raw, kf1d_update,
    unscented_predict, unscented_update, CategoricalBelief, ContinuousSystem, GaussianBelief,
    UkfParams,
};
use crate::planner::{minimize_box_qp, mode_insertion_gradient_fd, VariationCoefficients};
use crate::rng::rng_from_seed;
use crate::scenarios::{make_linear_fixture, LinearSystem, ScalarTargetConfig, ScalarTargetModel, TrackingConfig, TrackingModel};

pub const SUITES: [&str; 5] = ["adjoint-invariance", "mode-insertion-fd", "filter-bounds", "qp-bruteforce", "kf-equivalence"];

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyRow {
    pub case: String,
    pub value: f64,
    /// Pass when `value <= threshold`.
    pub threshold: f64,
}

impl VerifyRow {
    fn new(case: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { case: case.into(), value, threshold }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.threshold
    }
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub suite: String,
    pub rows: Vec<VerifyRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(VerifyRow::passed)
    }

    /// Tab-separated `suite case value threshold status` lines with a header.
    pub fn table(&self) -> String {
        let mut out = String::from("suite\tcase\tvalue\tthreshold\tstatus\n");
        for r in &self.rows {
            let status = if r.passed() { "pass" } else { "FAIL" };
            let _ = writeln!(out, "{}\t{}\t{:.6e}\t{:.6e}\t{}", self.suite, r.case, r.value, r.threshold, status);
        }
        out
    }
}

pub fn verify(suite: &str) -> Result<VerifyReport> {
    let rows = match suite {
        "adjoint-invariance" => adjoint_invariance()?,
        "mode-insertion-fd" => mode_insertion_fd()?,
        "filter-bounds" => filter_bounds()?,
        "qp-bruteforce" => qp_bruteforce(),
        "kf-equivalence" => kf_equivalence()?,
        other => return Err(SacbpError::Unknown { kind: "suite", name: other.to_string() }),
    };
    Ok(VerifyReport { suite: suite.to_string(), rows })
}

fn zeros(model: &dyn ScenarioModel, dt: f64, n: usize) -> Result<Nominal> {
    Ok(Nominal::OpenLoop(ControlSchedule::zeros(0.0, dt, n, model.control_box().clone())?))
}

fn invariance_case(model: &dyn ScenarioModel, x0: &DVector<f64>, grid: &TimeGrid, tau: f64, v: &DVector<f64>, seed: u64) -> Result<(f64, f64)> {
    let nominal = zeros(model, grid.dt_ctrl, grid.n_steps()?)?;
    let traj = simulate_nominal(model, x0, &nominal, grid, seed)?;
    let adj = adjoint_backward(&traj, &nominal, model)?;
    let var = variational_forward(&traj, &nominal, model, tau, v)?;
    let nu_adj = cost_variation_adjoint(&adj, &traj, model, tau, v)?;
    let nu_fwd = cost_variation_forward(&var, &traj, model);
    Ok((max_relative_drift(&adj, &var), (nu_adj - nu_fwd).abs() / (1.0 + nu_fwd.abs())))
}

fn adjoint_invariance() -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    let scalar = ScalarTargetModel::new(ScalarTargetConfig::default())?;
    let grid = TimeGrid::new(1e-3, 0.5, 2.0)?;
    for (i, tau) in [0.7, 1.25, 0.5].into_iter().enumerate() {
        let (drift, gap) = invariance_case(&scalar, &scalar.initial_state(), &grid, tau, &DVector::from_element(1, 1.5), i as u64)?;
        rows.push(VerifyRow::new(format!("scalar tau={tau} drift"), drift, 1e-6));
        rows.push(VerifyRow::new(format!("scalar tau={tau} adjoint-vs-forward"), gap, 1e-6));
    }
    let linear = make_linear_fixture(3, 11)?;
    let x0 = GaussianBelief::new(DVector::from_vec(vec![1.0, -0.5, 0.3]), DMatrix::identity(3, 3))?.pack();
    let grid = TimeGrid::new(1e-3, 0.5, 2.0)?;
    let (drift, gap) = invariance_case(&linear, &x0, &grid, 0.7, &DVector::from_vec(vec![2.0, -1.0]), 5)?;
    rows.push(VerifyRow::new("linear-ekf drift", drift, 1e-6));
    rows.push(VerifyRow::new("linear-ekf adjoint-vs-forward", gap, 1e-6));
    Ok(rows)
}

fn mode_insertion_fd() -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    let scalar = ScalarTargetModel::new(ScalarTargetConfig::default())?;
    let grid = TimeGrid::new(1e-4, 0.5, 2.0)?;
    let nominal = zeros(&scalar, 1e-4, grid.n_steps()?)?;
    let v = DVector::from_element(1, 1.5);
    let r = mode_insertion_gradient_fd(&scalar, &nominal, &scalar.initial_state(), &grid, 0.7, &v, &[1e-3, 5e-4], 1, 0)?;
    let e1 = (r.fd_mean[0] - r.nu_mean).abs();
    let e2 = (r.fd_mean[1] - r.nu_mean).abs();
    rows.push(VerifyRow::new("deterministic relative error at 1e-3", e1 / r.nu_mean.abs(), 0.01));
    rows.push(VerifyRow::new("deterministic error ratio distance from 2", ((e1 / e2) - 2.0).abs(), 0.5));

    let model = TrackingModel::new(TrackingConfig { n_targets: 2, ..Default::default() }, 0.2)?;
    let grid = TimeGrid::new(1e-3, 0.2, 2.0)?;
    let nominal = zeros(&model, 1e-3, grid.n_steps()?)?;
    let v = DVector::from_vec(vec![2.0, -1.0]);
    let r = mode_insertion_gradient_fd(&model, &nominal, &model.initial_state(), &grid, 0.35, &v, &[1e-3], 256, 17)?;
    rows.push(VerifyRow::new(
        "tracking |FD - E[nu]| / pooled stderr",
        (r.fd_mean[0] - r.nu_mean).abs() / r.pooled_stderr(0),
        2.0,
    ));
    Ok(rows)
}

fn filter_bounds() -> Result<Vec<VerifyRow>> {
    let mut rng = rng_from_seed(2024);
    let n = 100_000;
    let mut kf_violations = 0usize;
    for _ in 0..n {
        let mu: f64 = rng.random_range(-100.0..100.0);
        let s: f64 = 10f64.powf(rng.random_range(-6.0..3.0));
        let y: f64 = rng.random_range(-100.0..100.0);
        let (m, v) = kf1d_update(mu, s, y)?;
        let b = (mu * mu + s * s).sqrt();
        if (m * m + v * v).sqrt() > 2f64.sqrt() * b + b * y.abs() {
            kf_violations += 1;
        }
    }
    let mut cat_violations = 0usize;
    let mut tested = 0usize;
    for _ in 0..n {
        let k = rng.random_range(2..8);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
        let lik = DMatrix::from_fn(3, k, |_, _| rng.random_range(0.0..1.0));
        let y = rng.random_range(0..3);
        let b = CategoricalBelief::new(DVector::from_vec(w))?;
        if let Ok(post) = categorical_update(&b, &lik, y) {
            tested += 1;
            if post.weights().norm() > b.weights().norm() {
                cat_violations += 1;
            }
        }
    }
    Ok(vec![
        VerifyRow::new(format!("scalar KF bound violations of {n}"), kf_violations as f64, 0.0),
        VerifyRow::new(format!("categorical bound violations of {tested}"), cat_violations as f64, 0.0),
    ])
}

fn qp_bruteforce() -> Vec<VerifyRow> {
    let mut rng = rng_from_seed(99);
    let (mut worst_gap, mut worst_nu, mut worst_identity) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..100 {
        let c = DVector::from_fn(2, |_, _| rng.random_range(0.1..5.0));
        let h = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-2.0..2.0));
        let rho = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let lo = DVector::from_fn(2, |_, _| rng.random_range(-2.0..-0.1));
        let hi = DVector::from_fn(2, |_, _| rng.random_range(0.1..2.0));
        let bounds = ControlBox::new(lo.clone(), hi.clone()).expect("valid box");
        let u = DVector::from_fn(2, |i, _| rng.random_range(lo[i]..hi[i]));
        let coeffs = VariationCoefficients::from_costate(h.transpose() * rho, &u, &c);
        let v = minimize_box_qp(&coeffs.w, &c, &bounds);
        let nu = coeffs.value(&v, &c);
        let mut best = f64::INFINITY;
        // grid with spacing at most 1e-2 that includes both box edges
        let axis = |i: usize| {
            let n = ((hi[i] - lo[i]) / 1e-2).ceil() as usize;
            (0..=n).map(|k| lo[i] + (hi[i] - lo[i]) * k as f64 / n as f64).collect::<Vec<_>>()
        };
        let ys = axis(1);
        for a in axis(0) {
            for &b in &ys {
                let g = DVector::from_vec(vec![a, b]);
                best = best.min(coeffs.value(&g, &c));
            }
        }
        worst_gap = worst_gap.max((nu - best).abs());
        worst_nu = worst_nu.max(nu);
        worst_identity = worst_identity.max(coeffs.value(&u, &c).abs());
    }
    vec![
        VerifyRow::new("max |analytic - grid|", worst_gap, 1e-3),
        VerifyRow::new("max nu*", worst_nu, 0.0),
        VerifyRow::new("max |nu(u_nom)|", worst_identity, 0.0),
    ]
}

/// Exact discrete Kalman filter step for `x' = F x + G u + w`, `y = C x + v`.
fn kf_step(mean: &DVector<f64>, cov: &DMatrix<f64>, sys: &LinearSystem, f: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>, u: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = f * mean + g * u;
    let p = f * cov * f.transpose() + q;
    let s = &sys.c * &p * sys.c.transpose() + &sys.r;
    let k = &p * sys.c.transpose() * s.try_inverse().expect("innovation covariance invertible");
    let post_m = &m + &k * (y - &sys.c * &m);
    let post_p = (DMatrix::identity(p.nrows(), p.nrows()) - &k * &sys.c) * &p;
    (post_m, post_p)
}

fn kf_equivalence() -> Result<Vec<VerifyRow>> {
    let fixture = make_linear_fixture(3, 4)?;
    let sys = fixture.system();
    let dt = 0.05;
    let f = DMatrix::identity(3, 3) + &sys.a * dt;
    let g = &sys.b * dt;
    let q = &sys.q * dt;
    let params = UkfParams::default();
    let mut rng = rng_from_seed(8);
    let mut kf = (DVector::from_vec(vec![0.5, -1.0, 2.0]), DMatrix::identity(3, 3));
    let mut ekf = GaussianBelief::new(kf.0.clone(), kf.1.clone())?;
    let mut ukf = ekf.clone();
    let (mut ekf_err, mut ukf_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        kf = kf_step(&kf.0, &kf.1, sys, &f, &g, &q, &u, &y);
        let pred = ekf_predict_discrete(&ekf, &f, &g, &u, &q)?;
        ekf = ekf_update_raw(sys, &pred.mean, &pred.cov, &y)?;
        let pred = unscented_predict(&ukf.mean, &ukf.cov, |x| &f * x + &g * &u, &q, &params)?;
        ukf = unscented_update(&pred.mean, &pred.cov, &sys.r, |x, v| &sys.c * x + v, &y, &params)?;
        let err = |b: &GaussianBelief| (&b.mean - &kf.0).amax().max((&b.cov - &kf.1).amax());
        ekf_err = ekf_err.max(err(&ekf));
        ukf_err = ukf_err.max(err(&ukf));
    }

    // scalar Lyapunov flow: Σ(1) = e^{2a} Σ0 + q (e^{2a} - 1) / (2a)
    let (a, qs, s0) = (-0.7, 0.3, 1.5);
    let scalar = LinearSystem {
        a: DMatrix::from_element(1, 1, a),
        b: DMatrix::from_element(1, 1, 1.0),
        c: DMatrix::from_element(1, 1, 1.0),
        q: DMatrix::from_element(1, 1, qs),
        r: DMatrix::from_element(1, 1, 1.0),
    };
    debug_assert_eq!(scalar.state_dim(), 1);
    let mut b = GaussianBelief::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, s0))?;
    for _ in 0..1000 {
        b = ekf_predict_continuous(&b, &DVector::zeros(1), &scalar, 1e-3)?;
    }
    let e2a = (2.0 * a).exp();
    let exact = e2a * s0 + qs * (e2a - 1.0) / (2.0 * a);
    Ok(vec![
        VerifyRow::new("EKF vs KF over 20 steps", ekf_err, 1e-8),
        VerifyRow::new("UKF vs KF over 20 steps", ukf_err, 1e-8),
        VerifyRow::new("continuous predict vs Lyapunov closed form", (b.cov[(0, 0)] - exact).abs(), 1e-3),
    ])
}
