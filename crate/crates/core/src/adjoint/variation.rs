use nalgebra::DVector;

use super::backward::AdjointTrajectory;
use crate::dynamics::{HybridTrajectory, Nominal, ScenarioModel};
use crate::error::{invalid, Result, SacbpError};
use crate::linalg::all_finite;

/// First-order state variation from inserting a control at `τ`, stored from the insertion
/// grid index `start` to the end. `cost[i]` is the running-cost variation `Ψ̂` accumulated up to
/// grid point `start + i`.
#[derive(Clone, Debug)]
pub struct VariationTrajectory {
    pub t0: f64,
    pub dt: f64,
    pub start: usize,
    /// `Ψ` at grid points `start..=K` (right limits at epochs).
    pub psi: Vec<DVector<f64>>,
    /// `(grid index, Ψ(t_k⁻))` for each epoch at or after `start`.
    pub left_limits: Vec<(usize, DVector<f64>)>,
    pub cost: Vec<f64>,
}

impl VariationTrajectory {
    pub fn grid_times(&self) -> Vec<f64> {
        (0..self.psi.len()).map(|i| self.t0 + (self.start + i) as f64 * self.dt).collect()
    }

    pub fn final_psi(&self) -> &DVector<f64> {
        self.psi.last().expect("variation has at least one point")
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost.last().expect("variation has at least one point")
    }
}

/// Grid index of `τ`, which must lie in `(t0, t_f]`.
pub fn insertion_index(traj: &HybridTrajectory, tau: f64) -> Result<usize> {
    let j = traj.grid_index(tau)?;
    if j == 0 {
        return Err(invalid("insertion time must lie strictly after the start"));
    }
    Ok(j)
}

/// Nominal control in force just before `τ` and the state there (left limit at an epoch).
pub fn nominal_at<'a>(
    traj: &'a HybridTrajectory,
    tau: f64,
) -> Result<(usize, &'a DVector<f64>, &'a DVector<f64>)> {
    let j = insertion_index(traj, tau)?;
    Ok((j, traj.state_before(j), &traj.controls[j - 1]))
}

/// Forward linearized propagation of the variation caused by inserting `v` at `τ`:
/// `Ψ(τ) = H(x(τ))(v - u(τ))`, `Ψ̂(τ) = c(x, v) - c(x, u(τ))`, then the Euler-discretized
/// variational flow between epochs and the linearized jump at each epoch.
pub fn variational_forward(
    traj: &HybridTrajectory,
    nominal: &Nominal,
    model: &dyn ScenarioModel,
    tau: f64,
    v: &DVector<f64>,
) -> Result<VariationTrajectory> {
    if !model.control_box().contains(v) {
        return Err(SacbpError::OutsideBox(v.iter().copied().collect()));
    }
    let (start, x_tau, u_tau) = nominal_at(traj, tau)?;
    let dt = traj.dt;
    let k_steps = traj.n_steps();
    let policy = nominal.policy();
    let cu = model.control_cost_diag();

    let mut psi = model.control_coefficient(x_tau) * (v - u_tau);
    let mut acc = model.control_cost(v) - model.control_cost(u_tau);
    let mut out = VariationTrajectory {
        t0: traj.t0,
        dt,
        start,
        psi: Vec::with_capacity(k_steps + 1 - start),
        left_limits: Vec::new(),
        cost: Vec::with_capacity(k_steps + 1 - start),
    };
    if let Some(k) = traj.epoch_at(start) {
        out.left_limits.push((start, psi.clone()));
        psi = model.jump_jvp(&traj.pre_jump_states[k], &traj.observations[k], &psi)?;
    }
    out.psi.push(psi.clone());
    out.cost.push(acc);
    for j in start..k_steps {
        let x = &traj.states[j];
        let u = &traj.controls[j];
        let mut dpsi = model.flow_jvp(x, u, &psi)?;
        let mut dc = model.state_cost_gradient(x).dot(&psi);
        if traj.feedback[j] {
            let pi = policy.ok_or_else(|| invalid("feedback cell without a policy"))?;
            let du = pi.control_jvp(x, &psi);
            dpsi += model.control_coefficient(x) * &du;
            dc += u.component_mul(cu).dot(&du);
        }
        acc += dt * dc;
        psi += dpsi * dt;
        if let Some(k) = traj.epoch_at(j + 1) {
            out.left_limits.push((j + 1, psi.clone()));
            psi = model.jump_jvp(&traj.pre_jump_states[k], &traj.observations[k], &psi)?;
        }
        if !all_finite(&psi) || !acc.is_finite() {
            return Err(SacbpError::NonFinite("state variation"));
        }
        out.psi.push(psi.clone());
        out.cost.push(acc);
    }
    Ok(out)
}

/// Cost variation by forward accumulation: `Ψ̂(t_f) + ∇h(x(t_f))ᵀ Ψ(t_f)`.
pub fn cost_variation_forward(
    var: &VariationTrajectory,
    traj: &HybridTrajectory,
    model: &dyn ScenarioModel,
) -> f64 {
    var.final_cost() + model.terminal_cost_gradient(traj.final_state()).dot(var.final_psi())
}

/// Cost variation from the costate: `c(x, v) - c(x, u(τ)) + ρ(τ⁻)ᵀ H(x(τ⁻)) (v - u(τ))`.
pub fn cost_variation_adjoint(
    adj: &AdjointTrajectory,
    traj: &HybridTrajectory,
    model: &dyn ScenarioModel,
    tau: f64,
    v: &DVector<f64>,
) -> Result<f64> {
    let (j, x_tau, u_tau) = nominal_at(traj, tau)?;
    let h = model.control_coefficient(x_tau);
    let rho = adj.rho_before(j);
    Ok(model.control_cost(v) - model.control_cost(u_tau) + rho.dot(&(h * (v - u_tau))))
}

/// `ρ̄ᵀΨ̄ = ρᵀΨ + Ψ̂` at every grid point from the insertion time on (right limits).
pub fn dot_product_history(adj: &AdjointTrajectory, var: &VariationTrajectory) -> Vec<f64> {
    var.psi
        .iter()
        .zip(&var.cost)
        .enumerate()
        .map(|(i, (psi, c))| adj.rho[var.start + i].dot(psi) + c)
        .collect()
}

/// Invariant value at the insertion time (left limits if it is an epoch).
pub fn dot_product_at_insertion(adj: &AdjointTrajectory, var: &VariationTrajectory) -> f64 {
    let psi = match var.left_limits.first() {
        Some((j, p)) if *j == var.start => p,
        _ => &var.psi[0],
    };
    adj.rho_before(var.start).dot(psi) + var.cost[0]
}

/// Largest relative drift `|I(t) - I(τ)| / (1 + |I(τ)|)` of the adjoint–variation invariant.
pub fn max_relative_drift(adj: &AdjointTrajectory, var: &VariationTrajectory) -> f64 {
    let reference = dot_product_at_insertion(adj, var);
    let mut worst: f64 = 0.0;
    for value in dot_product_history(adj, var) {
        worst = worst.max((value - reference).abs() / (1.0 + reference.abs()));
    }
    for (j, psi) in &var.left_limits {
        let value = adj.rho_before(*j).dot(psi) + var.cost[j - var.start];
        worst = worst.max((value - reference).abs() / (1.0 + reference.abs()));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::adjoint_backward;
    use crate::dynamics::{simulate_hybrid, simulate_nominal, ControlBox, ControlSchedule, ObservationSource, TimeGrid};
    use crate::filters::GaussianBelief;
    use crate::scenarios::{make_linear_fixture, ScalarTargetConfig, ScalarTargetModel};
    use nalgebra::DMatrix;

    fn zeros(dt: f64, n: usize) -> Nominal {
        Nominal::OpenLoop(ControlSchedule::zeros(0.0, dt, n, ControlBox::symmetric(1, 3.0).unwrap()).unwrap())
    }

    #[test]
    fn nominal_insertion_has_no_variation() {
        let m = ScalarTargetModel::new(ScalarTargetConfig::default()).unwrap();
        let grid = TimeGrid::new(0.01, 0.5, 2.0).unwrap();
        let nominal = zeros(0.01, 200);
        let traj = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 2).unwrap();
        let var = variational_forward(&traj, &nominal, &m, 0.7, &DVector::zeros(1)).unwrap();
        assert!(var.psi.iter().all(|p| p.iter().all(|v| *v == 0.0)));
        assert!(var.cost.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn linear_flow_matches_matrix_exponential() {
        let a = -0.5;
        let m = ScalarTargetModel::new(ScalarTargetConfig { a, ..Default::default() }).unwrap();
        let dt = 1e-3;
        let grid = TimeGrid::new(dt, 0.5, 2.0).unwrap();
        let nominal = zeros(dt, 2000);
        let traj = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 2).unwrap();
        let tau = 0.7;
        let var = variational_forward(&traj, &nominal, &m, tau, &DVector::from_element(1, 1.5)).unwrap();
        for (i, psi) in var.psi.iter().enumerate() {
            let t = (var.start + i) as f64 * dt;
            let exact = 1.5 * (a * (t - tau)).exp();
            assert!((psi[0] - exact).abs() < 1e-3 * exact, "t = {t}: {} vs {exact}", psi[0]);
        }
    }

    #[test]
    fn variation_matches_perturbed_rollouts() {
        let m = ScalarTargetModel::new(ScalarTargetConfig::default()).unwrap();
        let dt = 1e-4;
        let grid = TimeGrid::new(dt, 0.5, 2.0).unwrap();
        let nominal = zeros(dt, 20_000);
        let x0 = m.initial_state();
        let traj = simulate_nominal(&m, &x0, &nominal, &grid, 8).unwrap();
        let (tau, v) = (0.7, DVector::from_element(1, 1.5));
        let var = variational_forward(&traj, &nominal, &m, tau, &v).unwrap();
        let errors: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&eps| {
                let pert = nominal.perturbed(tau, &v, eps).unwrap();
                let alt = simulate_hybrid(&m, &x0, &pert, &grid, ObservationSource::Replay(&traj.observations)).unwrap();
                ((alt.final_state() - traj.final_state()) / eps - var.final_psi()).norm()
            })
            .collect();
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.5..=2.5).contains(&ratio), "{errors:?}");
        }
    }

    #[test]
    fn general_case_adjoint_matches_forward() {
        let m = make_linear_fixture(2, 3).unwrap();
        let x0 = GaussianBelief::new(DVector::from_vec(vec![0.4, -1.0]), DMatrix::identity(2, 2)).unwrap().pack();
        let grid = TimeGrid::new(1e-3, 0.5, 2.0).unwrap();
        let bounds = m.control_box().clone();
        let nominal = Nominal::OpenLoop(ControlSchedule::zeros(0.0, 1e-3, 2000, bounds).unwrap());
        let traj = simulate_nominal(&m, &x0, &nominal, &grid, 4).unwrap();
        let adj = adjoint_backward(&traj, &nominal, &m).unwrap();
        let v = DVector::from_fn(m.control_dim(), |i, _| if i == 0 { 1.0 } else { -0.5 });
        let var = variational_forward(&traj, &nominal, &m, 1.0, &v).unwrap();
        let fwd = cost_variation_forward(&var, &traj, &m);
        let back = cost_variation_adjoint(&adj, &traj, &m, 1.0, &v).unwrap();
        assert!((fwd - back).abs() <= 1e-6 * (1.0 + fwd.abs()), "{fwd} vs {back}");
        assert!(max_relative_drift(&adj, &var) <= 1e-6);
    }
}
