//! The control update: Monte Carlo costate estimates on a grid of insertion times, the
//! box-constrained quadratic for the perturbation value, the receding-horizon loop, and a
//! finite-difference check of the mode insertion gradient.
//!
//! One update runs `N` forward rollouts and `N` backward passes over `(t_f - t_0)/Δt_c` cells,
//! so its cost is linear in `N` and in the horizon. Sample work runs as a parallel map in the
//! current rayon pool and is reduced in index order.

mod fd;
mod params;
mod qp;
mod receding;
mod update;

pub use fd::{mode_insertion_gradient_fd, FdReport};
pub use params::PlannerParams;
pub use qp::{
    expected_cost_variation, minimize_box_qp, optimize_perturbation, PerturbationResult,
    TauCandidate, VariationCoefficients,
};
pub use receding::{
    receding_horizon_run, GreedyPlanner, MctsPlanner, MetricRow, MetricsLog, NominalPlanner,
    Planner,
};
pub use update::{mean_coefficients, sacbp_control_update, sample_coefficients, SacbpPlanner};
