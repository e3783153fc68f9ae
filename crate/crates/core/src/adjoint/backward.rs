use nalgebra::DVector;

use crate::dynamics::{BeliefStructure, HybridTrajectory, Nominal, ScenarioModel};
use crate::error::{invalid, Result, SacbpError};
use crate::linalg::all_finite;

/// Costate on the control grid. `rho[j]` is the value at grid point `j` (right limit at
/// epochs); `left_limits[k]` is `ρ(t_k⁻)` at the epoch `jump_indices[k]`.
#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    pub t0: f64,
    pub dt: f64,
    pub rho: Vec<DVector<f64>>,
    pub left_limits: Vec<DVector<f64>>,
    pub jump_indices: Vec<usize>,
}

impl AdjointTrajectory {
    pub fn grid_times(&self) -> Vec<f64> {
        (0..self.rho.len()).map(|j| self.t0 + j as f64 * self.dt).collect()
    }

    /// Costate at grid index `j`, taking the left limit at epochs.
    pub fn rho_before(&self, j: usize) -> &DVector<f64> {
        match self.jump_indices.iter().position(|&e| e == j) {
            Some(k) => &self.left_limits[k],
            None => &self.rho[j],
        }
    }
}

/// Backward pass of the discrete adjoint on the forward Euler grid:
/// `ρ_K = ∇h(x_K)`, across an epoch `ρ(t_k⁻) = (∂g/∂x)ᵀ ρ(t_k)`, and per cell
/// `ρ_j = ρ⁻_{j+1} + Δt (∂c/∂x + (∂f/∂x)ᵀ ρ⁻_{j+1})`, plus the policy sensitivity
/// `(∂π/∂x)ᵀ Δt (C_u u + Hᵀ ρ⁻_{j+1})` on feedback cells.
pub fn adjoint_backward(
    traj: &HybridTrajectory,
    nominal: &Nominal,
    model: &dyn ScenarioModel,
) -> Result<AdjointTrajectory> {
    let k_steps = traj.n_steps();
    if traj.pre_jump_states.len() != traj.jump_indices.len()
        || traj.observations.len() != traj.jump_indices.len()
    {
        return Err(invalid("trajectory is missing pre-jump states or observations"));
    }
    let dt = traj.dt;
    let policy = nominal.policy();
    let cu = model.control_cost_diag();

    let mut rho = vec![DVector::zeros(0); k_steps + 1];
    let mut left_limits = vec![DVector::zeros(0); traj.jump_indices.len()];
    let mut r = model.terminal_cost_gradient(traj.final_state());
    check(&r)?;
    rho[k_steps] = r.clone();
    for j in (0..k_steps).rev() {
        let r_minus = match traj.epoch_at(j + 1) {
            Some(k) => {
                let left = model.jump_vjp(&traj.pre_jump_states[k], &traj.observations[k], &r)?;
                check(&left)?;
                left_limits[k] = left.clone();
                left
            }
            None => r,
        };
        let x = &traj.states[j];
        let u = &traj.controls[j];
        let mut next = &r_minus
            + (model.flow_vjp(x, u, &r_minus)? + model.state_cost_gradient(x)) * dt;
        if traj.feedback[j] {
            let pi = policy.ok_or_else(|| invalid("feedback cell without a policy"))?;
            let du = (u.component_mul(cu) + model.control_coefficient(x).transpose() * &r_minus) * dt;
            next += pi.control_vjp(x, &du);
        }
        check(&next)?;
        rho[j] = next.clone();
        r = next;
    }
    Ok(AdjointTrajectory {
        t0: traj.t0,
        dt,
        rho,
        left_limits,
        jump_indices: traj.jump_indices.clone(),
    })
}

/// Adjoint pass for a model whose state is a known physical state followed by a belief.
pub fn adjoint_backward_mixed(
    traj: &HybridTrajectory,
    nominal: &Nominal,
    model: &dyn ScenarioModel,
) -> Result<AdjointTrajectory> {
    match model.structure() {
        BeliefStructure::Mixed { .. } => adjoint_backward(traj, nominal, model),
        BeliefStructure::General => Err(invalid("model does not have mixed observability")),
    }
}

/// Adjoint pass for a model whose whole state is a belief.
pub fn adjoint_backward_general(
    traj: &HybridTrajectory,
    nominal: &Nominal,
    model: &dyn ScenarioModel,
) -> Result<AdjointTrajectory> {
    match model.structure() {
        BeliefStructure::General => adjoint_backward(traj, nominal, model),
        BeliefStructure::Mixed { .. } => Err(invalid("model has mixed observability")),
    }
}

fn check(v: &DVector<f64>) -> Result<()> {
    if all_finite(v) {
        Ok(())
    } else {
        Err(SacbpError::NonFinite("costate"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_nominal, ControlBox, ControlSchedule, TimeGrid};
    use crate::scenarios::{ScalarTargetConfig, ScalarTargetModel};

    fn run(cfg: ScalarTargetConfig) -> (HybridTrajectory, AdjointTrajectory) {
        let m = ScalarTargetModel::new(cfg).unwrap();
        let grid = TimeGrid::new(0.01, 0.5, 2.0).unwrap();
        let nominal = Nominal::OpenLoop(ControlSchedule::zeros(0.0, 0.01, 200, ControlBox::symmetric(1, 3.0).unwrap()).unwrap());
        let traj = simulate_nominal(&m, &m.initial_state(), &nominal, &grid, 5).unwrap();
        let adj = adjoint_backward(&traj, &nominal, &m).unwrap();
        (traj, adj)
    }

    const NO_STATE_COST: ScalarTargetConfig = ScalarTargetConfig {
        a: 0.0,
        q: 0.2,
        r0: 0.5,
        r1: 0.4,
        dt_obs: 0.5,
        cost_p: 0.0,
        cost_var: 0.0,
        cost_u: 0.4,
        terminal_p: 0.0,
        terminal_var: 0.0,
        terminal_mean: 0.0,
        control_limit: 3.0,
        initial: [1.0, 0.5, 1.5],
    };

    #[test]
    fn zero_cost_gives_zero_costate() {
        let (_, adj) = run(NO_STATE_COST);
        assert!(adj.rho.iter().chain(&adj.left_limits).all(|r| r.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn costate_frozen_without_coupling() {
        let (traj, adj) = run(ScalarTargetConfig { terminal_p: 0.3, ..NO_STATE_COST });
        let expected = 0.3 * traj.final_state()[0];
        for r in &adj.rho {
            assert!((r[0] - expected).abs() < 1e-15, "{} vs {expected}", r[0]);
        }
    }

    #[test]
    fn boundary_is_terminal_gradient() {
        let (traj, adj) = run(ScalarTargetConfig::default());
        let m = ScalarTargetModel::new(ScalarTargetConfig::default()).unwrap();
        assert_eq!(adj.rho.last().unwrap(), &m.terminal_cost_gradient(traj.final_state()));
        assert_eq!(adj.rho.len(), traj.states.len());
    }
}
