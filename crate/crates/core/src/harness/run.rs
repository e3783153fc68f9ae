use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{parse_value, set_toml_path, ExperimentConfig};
use crate::error::{Result, SacbpError};
use crate::planner::{receding_horizon_run, MetricsLog};

/// Environment variable read when neither the command line nor the config sets a worker count.
pub const WORKERS_ENV: &str = "SACBP_WORKERS";

/// Worker count: explicit value, then the config, then `SACBP_WORKERS`, then the machine.
pub fn resolve_workers(explicit: Option<usize>, cfg: &ExperimentConfig) -> usize {
    explicit
        .or(cfg.workers)
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// The metric rows of a run as CSV with header `t,metric,value` and 17 significant digits.
pub fn metrics_csv(log: &MetricsLog) -> String {
    let mut out = String::from("t,metric,value\n");
    for row in &log.rows {
        let _ = writeln!(out, "{:.16e},{},{:.16e}", row.t, row.metric, row.value);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub failed: bool,
    pub failure: Option<String>,
    pub csv: String,
    pub initial: BTreeMap<String, f64>,
    #[serde(rename = "final")]
    pub final_values: BTreeMap<String, f64>,
    pub epochs: usize,
    pub mean_update_seconds: f64,
    pub max_update_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean_final: f64,
    pub std_final: f64,
    pub median_final: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub scenario: String,
    pub planner: String,
    pub sim_duration: f64,
    pub workers: usize,
    pub seeds: Vec<SeedSummary>,
    /// Final-value statistics over the seeds that did not fail.
    pub metrics: BTreeMap<String, MetricSummary>,
    pub mean_update_seconds: f64,
    pub max_update_seconds: f64,
    pub failed_seeds: usize,
}

impl ExperimentSummary {
    pub fn all_failed(&self) -> bool {
        self.failed_seeds == self.seeds.len()
    }
}

fn stats(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary { n, mean_final: f64::NAN, std_final: f64::NAN, median_final: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    MetricSummary { n, mean_final: mean, std_final: var.sqrt(), median_final: median }
}

/// Runs one seed of the experiment. Setup errors become a failed log.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> MetricsLog {
    let attempt = || -> Result<MetricsLog> {
        let scenario = cfg.build_scenario()?;
        let planner = cfg.build_planner(scenario.as_ref(), seed)?;
        receding_horizon_run(scenario.as_ref(), planner.as_ref(), cfg.sim_duration, seed)
    };
    attempt().unwrap_or_else(|e| MetricsLog { failure: Some(e.to_string()), ..Default::default() })
}

/// Runs every seed in a pool of `workers` threads (seeds in parallel, and the planner's sample
/// map inside each), in memory.
pub fn run_logs(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<(u64, MetricsLog)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SacbpError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| cfg.seeds.par_iter().map(|&s| (s, run_seed(cfg, s))).collect()))
}

fn csv_name(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}_{}_seed{}.csv", cfg.scenario.id, cfg.planner.id, seed)
}

/// Runs the experiment, writes one CSV per seed and `summary.json` into `out_dir`, and returns
/// the summary.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<ExperimentSummary> {
    std::fs::create_dir_all(out_dir)?;
    let logs = run_logs(cfg, workers)?;
    let mut seeds = Vec::with_capacity(logs.len());
    let mut finals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut all_updates = Vec::new();
    for (seed, log) in &logs {
        let name = csv_name(cfg, *seed);
        std::fs::write(out_dir.join(&name), metrics_csv(log))?;
        let mut initial = BTreeMap::new();
        let mut final_values = BTreeMap::new();
        for row in &log.rows {
            initial.entry(row.metric.clone()).or_insert(row.value);
            final_values.insert(row.metric.clone(), row.value);
        }
        if !log.failed() {
            for (k, v) in &final_values {
                finals.entry(k.clone()).or_default().push(*v);
            }
        }
        all_updates.extend_from_slice(&log.update_seconds);
        seeds.push(SeedSummary {
            seed: *seed,
            failed: log.failed(),
            failure: log.failure.clone(),
            csv: name,
            initial,
            final_values,
            epochs: log.update_seconds.len(),
            mean_update_seconds: log.mean_update_seconds(),
            max_update_seconds: log.update_seconds.iter().copied().fold(0.0, f64::max),
        });
    }
    let failed_seeds = seeds.iter().filter(|s| s.failed).count();
    let summary = ExperimentSummary {
        scenario: cfg.scenario.id.clone(),
        planner: cfg.planner.id.clone(),
        sim_duration: cfg.sim_duration,
        workers,
        seeds,
        metrics: finals.iter().map(|(k, v)| (k.clone(), stats(v))).collect(),
        mean_update_seconds: if all_updates.is_empty() {
            0.0
        } else {
            all_updates.iter().sum::<f64>() / all_updates.len() as f64
        },
        max_update_seconds: all_updates.iter().copied().fold(0.0, f64::max),
        failed_seeds,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| SacbpError::Config(format!("cannot serialize summary: {e}")))?;
    std::fs::write(out_dir.join("summary.json"), json)?;
    Ok(summary)
}

/// Runs the experiment once per value of the parameter at `path`, each into
/// `out_dir/<last key>=<value>`.
pub fn sweep(
    config_text: &str,
    path: &str,
    values: &[String],
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<Vec<(String, ExperimentSummary)>> {
    let base: toml::Value = toml::from_str(config_text).map_err(|e| SacbpError::Config(e.to_string()))?;
    let leaf = path.rsplit('.').next().unwrap_or(path);
    let mut configs = Vec::with_capacity(values.len());
    for value in values {
        let mut doc = base.clone();
        set_toml_path(&mut doc, path, parse_value(value))?;
        let text = toml::to_string(&doc).map_err(|e| SacbpError::Config(e.to_string()))?;
        configs.push((value.clone(), ExperimentConfig::from_toml_str(&text)?));
    }
    let mut out = Vec::with_capacity(configs.len());
    for (value, cfg) in configs {
        let dir: PathBuf = out_dir.join(format!("{leaf}={value}"));
        let workers = resolve_workers(workers, &cfg);
        out.push((value, run_experiment(&cfg, &dir, workers)?));
    }
    Ok(out)
}
