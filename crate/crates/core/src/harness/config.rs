use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{DPWParams, GreedyParams};
use crate::error::{Result, SacbpError};
use crate::planner::{GreedyPlanner, MctsPlanner, NominalPlanner, Planner, PlannerParams, SacbpPlanner};
use crate::rng::derive_seed;
use crate::scenarios::{
    ManipulationConfig, ManipulationScenario, ScalarTargetConfig, ScalarTargetScenario, Scenario,
    TrackingConfig, TrackingScenario,
};

pub const SCENARIO_IDS: [&str; 3] = ["tracking", "manipulation", "scalar"];
pub const PLANNER_IDS: [&str; 4] = ["sacbp", "greedy", "mcts_dpw", "nominal_only"];

/// Scenario id plus the settings of every scenario; only the selected one is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub id: String,
    #[serde(default)]
    pub tracking: TrackingConfig,
    #[serde(default)]
    pub manipulation: ManipulationConfig,
    #[serde(default)]
    pub scalar: ScalarTargetConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub id: String,
    /// Timing is shared by every planner; the sampling fields only matter for `sacbp`.
    #[serde(default)]
    pub params: PlannerParams,
    #[serde(default)]
    pub dpw: DPWParams,
    #[serde(default)]
    pub greedy: GreedyParams,
}

/// One experiment: a scenario, a planner, and the seeds to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSection,
    pub planner: PlannerSection,
    pub sim_duration: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn config_error(msg: impl Into<String>) -> SacbpError {
    SacbpError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error(e.to_string()))
    }

    /// Checks ids, seeds and every section that will be used. Failures are config errors.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: SacbpError| match e {
            SacbpError::Config(_) | SacbpError::Unknown { .. } => e,
            other => config_error(other.to_string()),
        };
        if !SCENARIO_IDS.contains(&self.scenario.id.as_str()) {
            return Err(SacbpError::Unknown { kind: "scenario", name: self.scenario.id.clone() });
        }
        if !PLANNER_IDS.contains(&self.planner.id.as_str()) {
            return Err(SacbpError::Unknown { kind: "planner", name: self.planner.id.clone() });
        }
        if self.seeds.is_empty() {
            return Err(config_error("at least one seed is required"));
        }
        if self.workers == Some(0) {
            return Err(config_error("workers must be positive"));
        }
        self.planner.params.validate().map_err(wrap)?;
        if self.planner.id == "mcts_dpw" {
            self.planner.dpw.validate().map_err(wrap)?;
        }
        let p = &self.planner.params;
        if crate::dynamics::integer_ratio(self.sim_duration, p.dt_obs).is_none() || !(self.sim_duration > 0.0) {
            return Err(config_error("sim_duration must be a positive multiple of dt_obs"));
        }
        match self.scenario.id.as_str() {
            "tracking" => self.scenario.tracking.validate().map_err(wrap),
            "manipulation" => self.scenario.manipulation.validate().map_err(wrap),
            _ => Ok(()),
        }
    }

    pub fn build_scenario(&self) -> Result<Arc<dyn Scenario>> {
        let dt_obs = self.planner.params.dt_obs;
        Ok(match self.scenario.id.as_str() {
            "tracking" => Arc::new(TrackingScenario::new(self.scenario.tracking.clone(), dt_obs)?),
            "manipulation" => Arc::new(ManipulationScenario::new(self.scenario.manipulation.clone())?),
            "scalar" => {
                let cfg = ScalarTargetConfig { dt_obs, ..self.scenario.scalar.clone() };
                Arc::new(ScalarTargetScenario::new(cfg)?)
            }
            other => return Err(SacbpError::Unknown { kind: "scenario", name: other.to_string() }),
        })
    }

    /// The planner for the run with world seed `seed`; its sampling seeds are derived from the
    /// configured base seed and `seed`.
    pub fn build_planner(&self, scenario: &dyn Scenario, seed: u64) -> Result<Box<dyn Planner>> {
        let timing = PlannerParams {
            base_seed: derive_seed(self.planner.params.base_seed, seed, 0),
            ..self.planner.params.clone()
        };
        Ok(match self.planner.id.as_str() {
            "sacbp" => Box::new(SacbpPlanner::new(timing)?),
            "greedy" => Box::new(GreedyPlanner { timing, params: self.planner.greedy.clone() }),
            "mcts_dpw" => Box::new(MctsPlanner {
                timing,
                params: self.planner.dpw.clone(),
                rollout: scenario.rollout_policy(),
            }),
            "nominal_only" => Box::new(NominalPlanner { timing }),
            other => return Err(SacbpError::Unknown { kind: "planner", name: other.to_string() }),
        })
    }
}

/// Sets the value at a dotted path such as `planner.params.eps` in a TOML document.
pub fn set_toml_path(doc: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| config_error(format!("`{}` is not a table", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(config_error("empty parameter path"))
}

/// Parses a sweep value as a TOML literal, falling back to a string.
pub fn parse_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(text.to_string())),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
sim_duration = 2.0
seeds = [1, 2]

[scenario]
id = "scalar"

[planner]
id = "nominal_only"
params = { horizon = 1.0, dt_obs = 0.5, dt_ctrl = 0.05, eps = 0.1, t_calc = 0.1 }
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.planner.params.n_samples, 10);
        let round = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn rejects_unknown_ids_and_fields() {
        let bad = MINIMAL.replace("\"scalar\"", "\"maze\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(SacbpError::Unknown { .. })));
        let bad = MINIMAL.replace("seeds = [1, 2]", "seeds = []");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(SacbpError::Config(_))));
        let bad = MINIMAL.replace("sim_duration = 2.0", "sim_duration = 2.0\ncolour = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(SacbpError::Config(_))));
        let bad = MINIMAL.replace("eps = 0.1", "eps = 0.6");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(SacbpError::Config(_))));
    }

    #[test]
    fn sets_nested_values() {
        let mut doc: toml::Value = toml::from_str(MINIMAL).unwrap();
        set_toml_path(&mut doc, "planner.params.eps", parse_value("0.2")).unwrap();
        set_toml_path(&mut doc, "scenario.scalar.a", parse_value("-1")).unwrap();
        let cfg: ExperimentConfig = doc.try_into().unwrap();
        assert_eq!(cfg.planner.params.eps, 0.2);
        assert_eq!(cfg.scenario.scalar.a, -1.0);
        assert_eq!(parse_value("sacbp"), toml::Value::String("sacbp".into()));
    }
}
