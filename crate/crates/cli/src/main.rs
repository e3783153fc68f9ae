use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sacbp::harness::{resolve_workers, run_experiment, sweep, verify, ExperimentConfig, ExperimentSummary};
use sacbp::SacbpError;

#[derive(Parser)]
#[command(name = "sacbp", version, about = "Receding-horizon belief-space planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write CSV logs plus summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite and print a tab-separated pass/fail table.
    Verify {
        #[arg(long)]
        suite: String,
    },
    /// Run the experiment once per value of a dotted config parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted path such as `planner.params.n_samples`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const DEFAULT_OUT: &str = "results";

fn exit_for(err: &SacbpError) -> ExitCode {
    match err {
        SacbpError::Config(_) | SacbpError::Unknown { .. } | SacbpError::InvalidArgument(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn report(summary: &ExperimentSummary, dir: &Path) {
    println!(
        "{} / {}: {} seeds, {} failed, mean update {:.4}s, max {:.4}s -> {}",
        summary.scenario,
        summary.planner,
        summary.seeds.len(),
        summary.failed_seeds,
        summary.mean_update_seconds,
        summary.max_update_seconds,
        dir.display()
    );
    for (name, m) in &summary.metrics {
        println!("  {name}: mean {:.6} std {:.6} median {:.6}", m.mean_final, m.std_final, m.median_final);
    }
    for s in summary.seeds.iter().filter(|s| s.failed) {
        eprintln!("  seed {} failed: {}", s.seed, s.failure.as_deref().unwrap_or("unknown"));
    }
}

fn run(cli: Cli) -> Result<ExitCode, SacbpError> {
    match cli.command {
        Command::Run { config, workers, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
            let summary = run_experiment(&cfg, &dir, resolve_workers(workers, &cfg))?;
            report(&summary, &dir);
            Ok(if summary.all_failed() { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Verify { suite } => {
            let result = verify(&suite)?;
            print!("{}", result.table());
            Ok(if result.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Sweep { config, param, values, workers, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| SacbpError::Config(format!("cannot read {}: {e}", config.display())))?;
            let dir = out.unwrap_or_else(|| DEFAULT_OUT.into());
            let results = sweep(&text, &param, &values, &dir, workers)?;
            let mut all_failed = false;
            let leaf = param.rsplit('.').next().unwrap_or(&param);
            for (value, summary) in &results {
                report(summary, &dir.join(format!("{leaf}={value}")));
                all_failed |= summary.all_failed();
            }
            Ok(if all_failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
