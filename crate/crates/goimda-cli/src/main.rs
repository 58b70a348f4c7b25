//! Experiment CLI: run config-driven acquisition experiments, post-process
//! histories into regret / label-quantile tables, and run the numeric
//! self-check battery.
//!
//! Exit codes: 0 success, 2 partial replication failures, 3 config error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use goimda::benchfuncs::objective_by_name;
use goimda::harness::{
    self, compute_regret_rows, labels_quantiles_from_rows, load_config, run_experiment,
    run_selfcheck,
};

#[derive(Parser)]
#[command(
    name = "goimda",
    about = "Goal-oriented influence-maximizing data acquisition experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (TOML) and write CSV artifacts.
    Run {
        /// Path to the experiment configuration file.
        config: PathBuf,
        /// Also write a static SVG of the mean metric curves.
        #[arg(long)]
        plot: bool,
    },
    /// Recompute per-step immediate regret from a history CSV.
    Regret {
        /// Path to a history CSV written by `run`.
        history: PathBuf,
    },
    /// Labels-to-accuracy quantiles (25/50/75%) from a raw metrics CSV.
    Quantiles {
        /// Path to a metrics_raw.csv written by `run`.
        metrics: PathBuf,
        /// Comma-separated accuracy thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.8, 0.9, 0.95])]
        thresholds: Vec<f64>,
        /// Label count in the initial training set (added to the step index).
        #[arg(long, default_value_t = 0)]
        initial_labels: usize,
    },
    /// Run the numeric oracle self-checks and print one line per check.
    Selfcheck,
}

fn cmd_run(config: PathBuf, plot: bool) -> Result<ExitCode> {
    let cfg = match load_config(&config) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("config error: {err}");
            return Ok(ExitCode::from(3));
        }
    };
    let artifacts = run_experiment(&cfg, plot)?;
    println!(
        "wrote {} metric rows for {} methods to {}",
        artifacts.metric_rows.len(),
        cfg.methods.len(),
        artifacts.out_dir.display()
    );
    if artifacts.failed > 0 {
        eprintln!("{} replication(s) aborted before completing", artifacts.failed);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_regret(history: PathBuf) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&history)
        .with_context(|| format!("reading {}", history.display()))?;
    let rows = harness::parse_history_rows(&text)?;
    let Some(first) = rows.first() else {
        println!("step,regret");
        return Ok(ExitCode::SUCCESS);
    };
    let objective = objective_by_name(&first.problem, 0.0)
        .with_context(|| format!("objective '{}' not in the registry", first.problem))?;
    println!("step,regret");
    for row in compute_regret_rows(&rows, &objective) {
        println!("{},{}", row.0, row.1);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_quantiles(metrics: PathBuf, thresholds: Vec<f64>, initial_labels: usize) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&metrics)
        .with_context(|| format!("reading {}", metrics.display()))?;
    let rows = harness::parse_metric_rows(&text)?;
    let table = labels_quantiles_from_rows(&rows, &thresholds, initial_labels);
    println!("method,threshold,q25,q50,q75");
    let fmt = |q: Option<f64>| q.map(|v| v.to_string()).unwrap_or_else(|| "censored".into());
    for (method, threshold, q25, q50, q75) in table {
        println!("{method},{threshold},{},{},{}", fmt(q25), fmt(q50), fmt(q75));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_selfcheck() -> Result<ExitCode> {
    let results = run_selfcheck();
    let mut all_passed = true;
    for result in &results {
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", result.name, result.detail);
        all_passed &= result.passed;
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, plot } => cmd_run(config, plot),
        Command::Regret { history } => cmd_regret(history),
        Command::Quantiles {
            metrics,
            thresholds,
            initial_labels,
        } => cmd_quantiles(metrics, thresholds, initial_labels),
        Command::Selfcheck => cmd_selfcheck(),
    }
}
