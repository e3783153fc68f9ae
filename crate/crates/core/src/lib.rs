//! Sequential action control in belief space: receding-horizon planning for continuous-time
//! stochastic hybrid systems whose jumps are Bayesian filter updates.
//!
//! Each control update forward-simulates sampled belief trajectories under a nominal control,
//! integrates the costate backward along each, and inserts the single short control
//! perturbation that minimizes the Monte Carlo estimate of the mode insertion gradient.
//!
//! The cost of one update is `O(N (t_f - t_0)/Δt_o (M_fwd + M_bwd))` for `N` samples, where the
//! per-interval forward and backward costs scale with `Δt_o/Δt_c + 1`. For an EKF belief of
//! state dimension `n` the backward pass dominates at `O(n⁵)` per step with numeric Jacobians;
//! the shipped EKF belief model uses analytic reverse-mode products instead.

pub mod adjoint;
pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod filters;
pub mod harness;
pub mod linalg;
pub mod planner;
pub mod rng;
pub mod scenarios;

pub use adjoint::{AdjointTrajectory, VariationTrajectory};
pub use dynamics::{
    BeliefStructure, ControlBox, ControlSchedule, HybridTrajectory, Nominal, Policy,
    ScenarioModel, TimeGrid,
};
pub use error::{Result, SacbpError};
pub use filters::{CategoricalBelief, GaussianBelief};
pub use planner::{PerturbationResult, PlannerParams, SacbpPlanner};
