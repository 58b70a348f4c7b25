//! Experiment configuration: a single TOML file with a flat schema and one
//! section per subsystem. A mandatory `schema_version` field guards against
//! silent drift. Seeds are either listed explicitly or derived from
//! `base_seed`; after loading, the materialized seed list always has one
//! entry per replication.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Synthetic logistic simulation comparing bias-term treatments.
    LogisticBias,
    /// Noisy black-box optimization against GP baselines.
    NoisyOpt,
    /// Small active-learning loop with an MLP model.
    AlToy,
}

impl ExperimentKind {
    pub fn metric_name(self) -> &'static str {
        match self {
            ExperimentKind::LogisticBias | ExperimentKind::AlToy => "test_accuracy",
            ExperimentKind::NoisyOpt => "immediate_regret",
        }
    }

    pub fn known_methods(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::LogisticBias => &["true_bias", "jackknife", "one_bias", "random"],
            ExperimentKind::NoisyOpt => &["goimda", "ei", "ucb", "pi", "random"],
            ExperimentKind::AlToy => &["goimda", "random"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolSection {
    pub pool_size: usize,
    pub test_size: usize,
    /// Size of the goal's unlabeled target set (drawn from the test inputs).
    pub target_size: usize,
    pub initial_labels: usize,
}

impl Default for PoolSection {
    fn default() -> Self {
        Self {
            pool_size: 5_000,
            test_size: 2_000,
            target_size: 500,
            initial_labels: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub noise_sd: f64,
    /// Scale of the true parameter draw; larger values sharpen the labels.
    pub theta_scale: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            input_dim: 20,
            latent_dim: 3,
            noise_sd: 0.1,
            theta_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IhvpSection {
    /// "auto" | "cg" | "lissa" | "dense"
    pub solver: String,
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// 0 selects the scale automatically from a power-iteration estimate.
    pub lissa_scale: f64,
    pub lissa_batch: usize,
    pub lissa_repeats: usize,
    pub normal_equations: bool,
    /// "exact" | "gauss_newton"
    pub hessian: String,
}

impl Default for IhvpSection {
    fn default() -> Self {
        Self {
            solver: "auto".to_string(),
            damping: 1e-3,
            max_iters: 200,
            tol: 1e-10,
            lissa_scale: 0.0,
            lissa_batch: 64,
            lissa_repeats: 2,
            normal_equations: false,
            hessian: "exact".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub members: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { members: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoalSection {
    /// "nll" | "focal" | "entropy" | "opt_value"
    pub kind: String,
    pub focal_gamma: f64,
}

impl Default for GoalSection {
    fn default() -> Self {
        Self {
            kind: "nll".to_string(),
            focal_gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// "glm" | "rbf_glm" | "mlp"
    pub kind: String,
    pub ridge: f64,
    pub rbf_centers: usize,
    /// Relative to the box scale (diameter / sqrt(d)).
    pub rbf_lengthscale: f64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: "glm".to_string(),
            ridge: 1e-4,
            rbf_centers: 64,
            rbf_lengthscale: 0.2,
            hidden: vec![8],
            epochs: 400,
            learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSection {
    pub beta: f64,
    /// Negative values mean "use the problem's noise level".
    pub noise_sd: f64,
}

impl Default for GpSection {
    fn default() -> Self {
        Self {
            beta: 2.0,
            noise_sd: -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptSection {
    pub sigma: f64,
    pub initial_observations: usize,
    pub candidate_pool: usize,
    /// Inner-optimizer restarts for the recommended design.
    pub restarts: usize,
}

impl Default for OptSection {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            initial_observations: 5,
            candidate_pool: 2_000,
            restarts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub problem: String,
    pub methods: Vec<String>,
    pub budget: usize,
    pub replications: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base_seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output: String,
    /// Worker cap for concurrent replications; 0 uses the rayon default.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub pool: PoolSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub ihvp: IhvpSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub goal: GoalSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub gp: GpSection,
    #[serde(default)]
    pub opt: OptSection,
}

fn default_output() -> String {
    "runs/default".to_string()
}

/// Deterministic seed derivation for `base_seed` expansion and substreams.
/// Results stay within the positive i64 range so they serialize to TOML.
pub(crate) fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 step
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) & 0x7FFF_FFFF_FFFF_FFFF
}

impl ExperimentConfig {
    /// Checks invariants and fills the seed list from `base_seed` when seeds
    /// were not given explicitly.
    pub fn validate(mut self) -> Result<Self, HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be positive".into()));
        }
        if self.seeds.is_empty() {
            let base = self.base_seed.ok_or_else(|| {
                HarnessError::Config("either seeds or base_seed must be given".into())
            })?;
            self.seeds = (0..self.replications as u64)
                .map(|i| derive_seed(base, i))
                .collect();
        }
        if self.seeds.len() != self.replications {
            return Err(HarnessError::Config(format!(
                "seeds length {} must equal replications {}",
                self.seeds.len(),
                self.replications
            )));
        }
        if let Some(seed) = self.seeds.iter().find(|&&s| s > i64::MAX as u64) {
            return Err(HarnessError::Config(format!(
                "seed {seed} exceeds the manifest integer range (max {})",
                i64::MAX
            )));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("methods must be non-empty".into()));
        }
        let known = self.experiment.known_methods();
        for method in &self.methods {
            if !known.contains(&method.as_str()) {
                return Err(HarnessError::Config(format!(
                    "unknown method '{method}' for this experiment (expected one of {known:?})"
                )));
            }
        }
        match self.experiment {
            ExperimentKind::NoisyOpt => {
                crate::benchfuncs::objective_by_name(&self.problem, self.opt.sigma)?;
            }
            ExperimentKind::LogisticBias => {
                if self.problem != "ppca_logistic" {
                    return Err(HarnessError::Config(format!(
                        "unknown problem '{}' (expected ppca_logistic)",
                        self.problem
                    )));
                }
            }
            ExperimentKind::AlToy => {
                if self.problem != "xor_gaussians" {
                    return Err(HarnessError::Config(format!(
                        "unknown problem '{}' (expected xor_gaussians)",
                        self.problem
                    )));
                }
            }
        }
        match self.ihvp.solver.as_str() {
            "auto" | "cg" | "lissa" | "dense" => {}
            other => {
                return Err(HarnessError::Config(format!("unknown solver '{other}'")));
            }
        }
        match self.ihvp.hessian.as_str() {
            "exact" | "gauss_newton" => {}
            other => {
                return Err(HarnessError::Config(format!("unknown hessian '{other}'")));
            }
        }
        Ok(self)
    }
}

/// A run manifest: the materialized config plus the library version. Fully
/// deterministic (no timestamps), so replayed runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library_version: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }
}

/// Loads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig = toml::from_str(&text)?;
    config.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
schema_version = 1
experiment = "logistic_bias"
problem = "ppca_logistic"
methods = ["true_bias", "random"]
budget = 10
replications = 3
base_seed = 7
"#
        .to_string()
    }

    #[test]
    fn base_seed_materializes_distinct_seeds() {
        let cfg: ExperimentConfig = toml::from_str(&minimal_toml()).unwrap();
        let cfg = cfg.validate().unwrap();
        assert_eq!(cfg.seeds.len(), 3);
        assert_ne!(cfg.seeds[0], cfg.seeds[1]);
        assert_ne!(cfg.seeds[1], cfg.seeds[2]);
    }

    #[test]
    fn manifest_round_trips_to_equal_config() {
        let cfg: ExperimentConfig = toml::from_str(&minimal_toml()).unwrap();
        let cfg = cfg.validate().unwrap();
        let manifest = Manifest::new(cfg.clone());
        let text = manifest.to_toml().unwrap();
        let parsed = Manifest::from_toml(&text).unwrap();
        assert_eq!(parsed.config, cfg);
        assert_eq!(parsed, manifest);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = minimal_toml() + "\nnot_a_field = 3\n";
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let text = minimal_toml().replace("schema_version = 1", "schema_version = 99");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_method_is_rejected() {
        let text = minimal_toml().replace("\"random\"", "\"bogus\"");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_list_length_must_match() {
        let text = minimal_toml() + "\nseeds = [1, 2]\n";
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
