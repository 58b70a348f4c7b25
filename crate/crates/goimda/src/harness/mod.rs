//! Config-driven experiment runner: replications, metrics, bootstrap
//! confidence intervals, CSV emission, and the self-check battery.

mod config;
mod csvio;
mod experiments;
mod metrics;
mod selfcheck;
mod svg;

pub use config::{
    load_config, EnsembleSection, ExperimentConfig, ExperimentKind, GoalSection, GpSection,
    IhvpSection, Manifest, ModelSection, OptSection, PoolSection, SimSection, SCHEMA_VERSION,
};
pub use csvio::{
    metric_rows_to_csv, parse_history_rows, parse_metric_rows, read_csv, write_history_csv,
    HistoryRow, MetricRow, HISTORY_HEADER, METRIC_HEADER,
};
pub use experiments::{run_experiment, RunArtifacts, ReplicationOutcome};
pub use metrics::{
    bootstrap_ci, compute_regret, compute_regret_rows, labels_quantiles_from_rows,
    labels_to_accuracy, quantile, QuantileTable,
};
pub use selfcheck::{run_selfcheck, SelfcheckResult};
pub use svg::write_curves_svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml parse error: {0}")]
    TomlParse(#[from] toml::de::Error),
    #[error("toml write error: {0}")]
    TomlWrite(#[from] toml::ser::Error),
    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },
    #[error(transparent)]
    Bench(#[from] crate::benchfuncs::BenchError),
    #[error(transparent)]
    Goal(#[from] crate::goals::GoalError),
}

/// Environment variable naming the root directory under which run outputs
/// are written. Relative config outputs resolve against it.
pub const OUTPUT_ROOT_ENV: &str = "GOIMDA_OUT";
