//! Experiment configuration, deterministic multi-seed runs with CSV and JSON output, parameter
//! sweeps, and the verification suites behind the `verify` command.

mod config;
mod run;
mod verify;

pub use config::{parse_value, set_toml_path, ExperimentConfig, PlannerSection, ScenarioSection, PLANNER_IDS, SCENARIO_IDS};
pub use run::{
    metrics_csv, resolve_workers, run_experiment, run_logs, run_seed, sweep, ExperimentSummary,
    MetricSummary, SeedSummary, WORKERS_ENV,
};
pub use verify::{verify, VerifyReport, VerifyRow, SUITES};
