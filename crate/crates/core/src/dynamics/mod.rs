//! Hybrid systems with time-driven switching: Euler flow between observation epochs and filter
//! jumps at the epochs.

mod model;
mod nominal;
mod schedule;
mod simulate;

pub use model::{control_affinity_residual, BeliefStructure, ScenarioModel};
pub use nominal::{CellControl, ConstantPolicy, Nominal, Policy, PolicySchedule};
pub use schedule::{perturb_control, ControlBox, ControlSchedule};
pub use simulate::{
    euler_flow, simulate_hybrid, simulate_nominal, total_cost, HybridTrajectory,
    ObservationSource, TimeGrid,
};
pub(crate) use simulate::integer_ratio;
