//! Shared fixtures for the planner benchmarks in `benches/`.

use nalgebra::DVector;
use sacbp::dynamics::Nominal;
use sacbp::planner::PlannerParams;
use sacbp::scenarios::{ManipulationConfig, ManipulationScenario, Scenario, TrackingConfig, TrackingScenario};

/// A scenario with its initial state and the nominal for the first epoch.
pub struct Fixture {
    pub scenario: Box<dyn Scenario>,
    pub x0: DVector<f64>,
    pub nominal: Nominal,
    pub params: PlannerParams,
}

fn fixture(scenario: Box<dyn Scenario>, params: PlannerParams) -> Fixture {
    let nominal = scenario
        .base_nominal(0.0, params.dt_ctrl, params.n_cells().expect("valid timing"))
        .expect("nominal");
    Fixture { x0: scenario.initial_state(), scenario, nominal, params }
}

pub fn tracking(n_targets: usize) -> Fixture {
    let params = PlannerParams::default();
    let cfg = TrackingConfig { n_targets, ..Default::default() };
    fixture(Box::new(TrackingScenario::new(cfg, params.dt_obs).expect("tracking")), params)
}

pub fn manipulation() -> Fixture {
    let params = PlannerParams { eps: 0.04, ..Default::default() };
    fixture(Box::new(ManipulationScenario::new(ManipulationConfig::default()).expect("manipulation")), params)
}
