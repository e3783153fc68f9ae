//! Concrete belief-space problems: active range-only tracking, manipulation under model
//! uncertainty, and linear-Gaussian fixtures.

mod belief;
pub mod linear;
pub mod manipulation;
pub mod tracking;

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

pub use belief::EkfBeliefModel;
pub use linear::{make_linear_fixture, LinearSystem, ScalarTargetConfig, ScalarTargetModel};
pub use manipulation::{
    make_manipulation_scenario, ManipulationConfig, ManipulationModel, ManipulationScenario,
    PlanarObject,
};
pub use tracking::{make_tracking_scenario, TrackingConfig, TrackingModel, TrackingScenario};

use crate::dynamics::{ControlSchedule, Nominal, Policy, ScenarioModel};
use crate::error::Result;
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Ground truth plus the agent's augmented state for one simulated run.
pub trait World: Send {
    /// The agent's current augmented state (known physical state and belief).
    fn agent_state(&self) -> &DVector<f64>;
    /// Advances the truth and the agent's state flow by `dt` under `u`.
    fn advance(&mut self, u: &DVector<f64>, dt: f64) -> Result<()>;
    /// Takes a measurement of the truth and applies the filter update.
    fn observe(&mut self) -> Result<()>;
    fn metrics(&self) -> Result<Vec<(&'static str, f64)>>;
}

/// A planning model together with its nominal control and ground-truth simulator.
pub trait Scenario: Send + Sync {
    fn name(&self) -> &'static str;
    fn model(&self) -> &dyn ScenarioModel;
    fn initial_state(&self) -> DVector<f64>;
    /// Nominal control of `n_cells` cells starting at `t0`.
    fn base_nominal(&self, t0: f64, dt: f64, n_cells: usize) -> Result<Nominal>;
    fn new_world(&self, seed: u64) -> Result<Box<dyn World>>;
    fn metric_names(&self) -> Vec<&'static str>;
    /// Default policy for tree-search rollouts; zero control when `None`.
    fn rollout_policy(&self) -> Option<Arc<dyn Policy>> {
        None
    }
}

/// The scalar mixed-observability fixture as a runnable scenario.
pub struct ScalarTargetScenario {
    model: Arc<ScalarTargetModel>,
}

impl ScalarTargetScenario {
    pub fn new(cfg: ScalarTargetConfig) -> Result<Self> {
        Ok(Self { model: Arc::new(ScalarTargetModel::new(cfg)?) })
    }
}

impl Scenario for ScalarTargetScenario {
    fn name(&self) -> &'static str {
        "scalar"
    }
    fn model(&self) -> &dyn ScenarioModel {
        self.model.as_ref()
    }
    fn initial_state(&self) -> DVector<f64> {
        self.model.initial_state()
    }
    fn base_nominal(&self, t0: f64, dt: f64, n_cells: usize) -> Result<Nominal> {
        Ok(Nominal::OpenLoop(ControlSchedule::zeros(
            t0,
            dt,
            n_cells,
            self.model.control_box().clone(),
        )?))
    }
    fn new_world(&self, seed: u64) -> Result<Box<dyn World>> {
        let x = self.model.initial_state();
        let mut rng = rng_from_seed(derive_seed(seed, u64::MAX, 2));
        let z: f64 = rng.sample(StandardNormal);
        let target = x[1] + x[2].sqrt() * z;
        Ok(Box::new(ScalarTargetWorld { model: Arc::clone(&self.model), x, target, rng }))
    }
    fn metric_names(&self) -> Vec<&'static str> {
        vec!["position", "variance"]
    }
}

struct ScalarTargetWorld {
    model: Arc<ScalarTargetModel>,
    x: DVector<f64>,
    target: f64,
    rng: SimRng,
}

impl World for ScalarTargetWorld {
    fn agent_state(&self) -> &DVector<f64> {
        &self.x
    }
    fn advance(&mut self, u: &DVector<f64>, dt: f64) -> Result<()> {
        let dx = self.model.flow(&self.x, u) * dt;
        self.x += dx;
        let z: f64 = self.rng.sample(StandardNormal);
        self.target += (self.model.config().q * dt).sqrt() * z;
        Ok(())
    }
    fn observe(&mut self) -> Result<()> {
        let z: f64 = self.rng.sample(StandardNormal);
        let y = self.target + self.model.noise_var(self.x[0]).sqrt() * z;
        self.x = self.model.jump(&self.x, &DVector::from_element(1, y))?;
        Ok(())
    }
    fn metrics(&self) -> Result<Vec<(&'static str, f64)>> {
        Ok(vec![("position", self.x[0]), ("variance", self.x[2])])
    }
}
