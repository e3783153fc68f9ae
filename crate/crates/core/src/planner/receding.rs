use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use super::params::PlannerParams;
use super::update::SacbpPlanner;
use crate::baselines::{greedy_control, mcts_dpw_plan, DPWParams, GreedyParams};
use crate::dynamics::{integer_ratio, Nominal, Policy, ScenarioModel};
use crate::error::{invalid, Result};
use crate::rng::derive_seed;
use crate::scenarios::Scenario;

/// Anything that turns the current state and nominal into the plan for the next interval.
pub trait Planner: Send + Sync {
    fn name(&self) -> &'static str;
    /// Shared timing: horizon, steps and latency.
    fn timing(&self) -> &PlannerParams;
    fn plan(&self, model: &dyn ScenarioModel, x: &DVector<f64>, nominal: &Nominal, epoch: u64) -> Result<Nominal>;
}

impl Planner for SacbpPlanner {
    fn name(&self) -> &'static str {
        "sacbp"
    }
    fn timing(&self) -> &PlannerParams {
        self.params()
    }
    fn plan(&self, model: &dyn ScenarioModel, x: &DVector<f64>, nominal: &Nominal, epoch: u64) -> Result<Nominal> {
        Ok(self.update(model, x, nominal, epoch)?.0)
    }
}

/// Executes the nominal unchanged.
pub struct NominalPlanner {
    pub timing: PlannerParams,
}

impl Planner for NominalPlanner {
    fn name(&self) -> &'static str {
        "nominal_only"
    }
    fn timing(&self) -> &PlannerParams {
        &self.timing
    }
    fn plan(&self, _model: &dyn ScenarioModel, _x: &DVector<f64>, nominal: &Nominal, _epoch: u64) -> Result<Nominal> {
        Ok(nominal.clone())
    }
}

/// Holds `u` on every cell after the latency window.
fn hold_after_latency(nominal: &Nominal, u: &DVector<f64>, timing: &PlannerParams) -> Result<Nominal> {
    let t_end = nominal.t0() + nominal.dt() * nominal.n_cells() as f64;
    nominal.perturbed(t_end, u, t_end - nominal.t0() - timing.t_calc)
}

/// One-step greedy descent on the terminal cost, held constant after the latency window.
pub struct GreedyPlanner {
    pub timing: PlannerParams,
    pub params: GreedyParams,
}

impl Planner for GreedyPlanner {
    fn name(&self) -> &'static str {
        "greedy"
    }
    fn timing(&self) -> &PlannerParams {
        &self.timing
    }
    fn plan(&self, model: &dyn ScenarioModel, x: &DVector<f64>, nominal: &Nominal, _epoch: u64) -> Result<Nominal> {
        let u = greedy_control(model, x, self.timing.dt_ctrl, self.timing.dt_obs, &self.params)?;
        hold_after_latency(nominal, &u, &self.timing)
    }
}

/// Belief-space MCTS-DPW, held constant after the latency window.
pub struct MctsPlanner {
    pub timing: PlannerParams,
    pub params: DPWParams,
    pub rollout: Option<Arc<dyn Policy>>,
}

impl Planner for MctsPlanner {
    fn name(&self) -> &'static str {
        "mcts_dpw"
    }
    fn timing(&self) -> &PlannerParams {
        &self.timing
    }
    fn plan(&self, model: &dyn ScenarioModel, x: &DVector<f64>, nominal: &Nominal, epoch: u64) -> Result<Nominal> {
        let seed = derive_seed(self.timing.base_seed, epoch, 0);
        let u = mcts_dpw_plan(
            x,
            model,
            self.timing.dt_ctrl,
            self.timing.dt_obs,
            self.rollout.clone(),
            &self.params,
            seed,
        )?;
        hold_after_latency(nominal, &u, &self.timing)
    }
}

/// One logged value.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub t: f64,
    pub metric: String,
    pub value: f64,
}

/// Metric history of one receding-horizon run.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    /// Time-ordered rows; one set at `t = 0` and one after every observation.
    pub rows: Vec<MetricRow>,
    /// Real seconds spent in each planner call.
    pub update_seconds: Vec<f64>,
    /// Reason the run stopped early, if it did.
    pub failure: Option<String>,
}

impl MetricsLog {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn metric(&self, name: &str) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.metric == name).map(|r| (r.t, r.value)).collect()
    }

    pub fn initial(&self, name: &str) -> Option<f64> {
        self.metric(name).first().map(|r| r.1)
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.metric(name).last().map(|r| r.1)
    }

    pub fn mean_update_seconds(&self) -> f64 {
        if self.update_seconds.is_empty() {
            0.0
        } else {
            self.update_seconds.iter().sum::<f64>() / self.update_seconds.len() as f64
        }
    }

    fn push(&mut self, t: f64, metrics: Vec<(&'static str, f64)>) {
        for (name, value) in metrics {
            self.rows.push(MetricRow { t, metric: name.to_string(), value });
        }
    }
}

/// Closed-loop simulation: every `Δt_o` the planner is called on the agent's current state with
/// a nominal whose first `t_calc` worth of cells replay the previous plan (the controls that run
/// while the update computes). The new plan drives the truth for one interval, then the agent
/// observes and updates its belief. Planner or filter failures end the run and are recorded in
/// the log.
pub fn receding_horizon_run(
    scenario: &dyn Scenario,
    planner: &dyn Planner,
    sim_duration: f64,
    world_seed: u64,
) -> Result<MetricsLog> {
    let timing = planner.timing();
    timing.validate()?;
    let n_epochs = integer_ratio(sim_duration, timing.dt_obs)
        .ok_or_else(|| invalid("simulation duration is not a multiple of the observation interval"))?;
    let steps = timing.grid()?.steps_per_obs()?;
    let n_cells = timing.n_cells()?;
    let n_calc = timing.calc_cells()?;
    let model = scenario.model();

    let mut log = MetricsLog::default();
    let mut world = scenario.new_world(world_seed)?;
    log.push(0.0, world.metrics()?);
    let mut previous: Option<Nominal> = None;
    for k in 0..n_epochs {
        let t_k = k as f64 * timing.dt_obs;
        let step = || -> Result<Nominal> {
            let base = scenario.base_nominal(t_k, timing.dt_ctrl, n_cells)?;
            match &previous {
                Some(prev) => base.with_committed_prefix(prev, n_calc),
                None => Ok(base),
            }
        };
        let nominal = match step() {
            Ok(n) => n,
            Err(e) => {
                log.failure = Some(e.to_string());
                break;
            }
        };
        let x = world.agent_state().clone();
        let started = Instant::now();
        let planned = planner.plan(model, &x, &nominal, k as u64);
        log.update_seconds.push(started.elapsed().as_secs_f64());
        let plan = match planned {
            Ok(p) => p,
            Err(e) => {
                log.failure = Some(format!("planner failed at t = {t_k}: {e}"));
                break;
            }
        };
        let mut interval = || -> Result<()> {
            for j in 0..steps {
                let u = plan.control(j, world.agent_state()).u;
                let u = model.control_box().clamp(&u);
                world.advance(&u, timing.dt_ctrl)?;
            }
            world.observe()
        };
        if let Err(e) = interval() {
            log.failure = Some(format!("simulation failed after t = {t_k}: {e}"));
            break;
        }
        match world.metrics() {
            Ok(m) => log.push((k + 1) as f64 * timing.dt_obs, m),
            Err(e) => {
                log.failure = Some(format!("metrics failed after t = {t_k}: {e}"));
                break;
            }
        }
        previous = Some(plan);
    }
    Ok(log)
}
