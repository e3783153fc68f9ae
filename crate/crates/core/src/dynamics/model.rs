use nalgebra::{DMatrix, DVector};

use super::schedule::ControlBox;
use crate::adjoint::{jacobian, jacobian_with};
use crate::error::Result;
use crate::rng::SimRng;

/// How the augmented state is laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeliefStructure {
    /// `x = p ⊕ b`: a deterministic, fully observed physical state of dimension
    /// `physical_dim` followed by a belief that only changes at observation epochs.
    Mixed { physical_dim: usize },
    /// `x = b`: the whole state is a belief with continuous prediction flow.
    General,
}

/// A control-affine hybrid system over the augmented state `x`:
/// flow `ẋ = drift(x) + H(x) u` between observation epochs, jump `x ← jump(x⁻, y)` at epochs,
/// running cost `state_cost(x) + ½ uᵀ C_u u` and terminal cost `terminal_cost(x)`.
///
/// Derivative hooks default to central finite differences; models override them where an
/// analytic form is cheaper.
pub trait ScenarioModel: Send + Sync {
    fn structure(&self) -> BeliefStructure;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `H(x)`, of shape `state_dim × control_dim`.
    fn control_coefficient(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn flow(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.control_coefficient(x) * u
    }

    fn flow_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        jacobian(|z| self.flow(z, u), x)
    }

    /// `(∂f/∂x)ᵀ λ`.
    fn flow_vjp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.flow_jacobian(x, u)?.transpose() * lambda)
    }

    /// `(∂f/∂x) ψ`.
    fn flow_jvp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        psi: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.flow_jacobian(x, u)? * psi)
    }

    fn jump(&self, x_pre: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>>;

    fn jump_jacobian(&self, x_pre: &DVector<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        jacobian_with(|z| self.jump(z, y), x_pre)
    }

    fn jump_vjp(
        &self,
        x_pre: &DVector<f64>,
        y: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.jump_jacobian(x_pre, y)?.transpose() * lambda)
    }

    fn jump_jvp(
        &self,
        x_pre: &DVector<f64>,
        y: &DVector<f64>,
        psi: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.jump_jacobian(x_pre, y)? * psi)
    }

    fn state_cost(&self, x: &DVector<f64>) -> f64;

    fn state_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        scalar_gradient(|z| self.state_cost(z), x)
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64;

    fn terminal_cost_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        scalar_gradient(|z| self.terminal_cost(z), x)
    }

    /// Diagonal of the control cost matrix `C_u`.
    fn control_cost_diag(&self) -> &DVector<f64>;

    fn control_box(&self) -> &ControlBox;

    /// Draws an observation for the epoch whose pre-jump state is `x_pre`: a latent state from
    /// the belief, then the sensor noise at that latent state.
    fn sample_observation(&self, x_pre: &DVector<f64>, rng: &mut SimRng) -> DVector<f64>;

    /// Noise-free measurement at the belief mean.
    fn predicted_observation(&self, x_pre: &DVector<f64>) -> DVector<f64>;

    fn control_cost(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.iter().zip(self.control_cost_diag().iter()).map(|(ui, ci)| ci * ui * ui).sum::<f64>()
    }

    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.state_cost(x) + self.control_cost(u)
    }
}

pub(crate) fn scalar_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>) -> DVector<f64> {
    match jacobian(|z| DVector::from_element(1, f(z)), x) {
        Ok(j) => j.row(0).transpose(),
        Err(_) => DVector::from_element(x.len(), f64::NAN),
    }
}

/// Residual of the control-affinity identity `f(x,u) - f(x,0) - H(x)u`, relative to
/// `1 + |f(x,u)|`.
pub fn control_affinity_residual(
    model: &dyn ScenarioModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let fu = model.flow(x, u);
    let f0 = model.flow(x, &DVector::zeros(u.len()));
    let hu = model.control_coefficient(x) * u;
    (&fu - &f0 - hu).norm() / (1.0 + fu.norm())
}
