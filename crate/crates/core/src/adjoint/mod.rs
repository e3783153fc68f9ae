//! Backward costate integration, forward variational integration, and finite-difference
//! Jacobians. Both passes share the forward Euler grid so that the invariant `ρᵀΨ + Ψ̂` holds to
//! rounding error.

mod backward;
mod jacobian;
mod variation;

pub use backward::{
    adjoint_backward, adjoint_backward_general, adjoint_backward_mixed, AdjointTrajectory,
};
pub use jacobian::{directional_derivative, fd_step, jacobian, jacobian_with};
pub use variation::{
    cost_variation_adjoint, cost_variation_forward, dot_product_at_insertion,
    dot_product_history, insertion_index, max_relative_drift, nominal_at, variational_forward,
    VariationTrajectory,
};
