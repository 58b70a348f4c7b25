//! Experiment assembly and execution: one acquisition loop per
//! (method, replication) pair, run concurrently up to the worker cap, with
//! deterministic per-replication seeding and serialized output writing.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::acquisition::{
    run_loop, AcquisitionHistory, BiasSource, LoopConfig, LoopProblem, LoopStatus, ScoreRule,
    SolverKind, StepView,
};
use crate::benchfuncs::{gen_ppca_logistic, objective_by_name, observe, PpcaTask};
use crate::diffcore::{Example, HessianKind};
use crate::expfam::{sigmoid, Family, IdentityFeatures, RbfFeatures};
use crate::glm::NewtonOptions;
use crate::goals::{DomainBox, GoalKind, GoalObjective, InnerOptConfig};
use crate::gp::{bo_loop, AcqKind, BoConfig, BoProblem, GaussianProcess};
use crate::halton::{halton_in_box, halton_in_box_skip};
use crate::ihvp::IhvpConfig;
use crate::mlp::Mlp;
use crate::model::{GlmTemplate, MlpTemplate};
use crate::train::AdamConfig;

use super::config::{derive_seed, ExperimentConfig, ExperimentKind, Manifest};
use super::csvio::{metric_rows_to_csv, write_history_csv, MetricRow};
use super::metrics::{bootstrap_ci, quantile};
use super::{HarnessError, OUTPUT_ROOT_ENV};

#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub method: String,
    pub replication: usize,
    pub seed: u64,
    pub history: AcquisitionHistory,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub metric_rows: Vec<MetricRow>,
    pub outcomes: Vec<ReplicationOutcome>,
    /// Replications that aborted before completing their budget.
    pub failed: usize,
}

fn method_stream(method: &str) -> u64 {
    // FNV-1a over the method name: stable substream id per method
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in method.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

fn loop_config(cfg: &ExperimentConfig, score: ScoreRule) -> LoopConfig {
    LoopConfig {
        budget: cfg.budget,
        ensemble_size: cfg.ensemble.members,
        ihvp: IhvpConfig {
            damping: cfg.ihvp.damping,
            max_iters: cfg.ihvp.max_iters,
            tol: cfg.ihvp.tol,
            lissa_scale: cfg.ihvp.lissa_scale,
            lissa_batch: cfg.ihvp.lissa_batch,
            lissa_repeats: cfg.ihvp.lissa_repeats,
            normal_equations: cfg.ihvp.normal_equations,
        },
        solver: match cfg.ihvp.solver.as_str() {
            "cg" => SolverKind::Cg,
            "lissa" => SolverKind::Lissa,
            "dense" => SolverKind::Dense,
            _ => SolverKind::Auto,
        },
        hessian: match cfg.ihvp.hessian.as_str() {
            "gauss_newton" => HessianKind::GaussNewton,
            _ => HessianKind::Exact,
        },
        score,
        n_draws: 256,
        early_stop_goal: None,
        warm_start: true,
    }
}

/// Picks a class-balanced initial labeled set from the pool front, removing
/// the chosen items from the pool.
fn balanced_initial(pool: &mut Vec<Example>, count: usize) -> Vec<Example> {
    let mut initial = Vec::with_capacity(count);
    let mut want_positive = true;
    while initial.len() < count {
        let position = pool
            .iter()
            .position(|e| (e.y >= 0.5) == want_positive)
            .or_else(|| (!pool.is_empty()).then_some(0));
        match position {
            Some(p) => initial.push(pool.remove(p)),
            None => break,
        }
        want_positive = !want_positive;
    }
    initial
}

fn classification_accuracy(view: &StepView<'_>, test: &[Example]) -> f64 {
    let correct = test
        .iter()
        .filter(|e| {
            let p = view.family.mean(view.model.eta(view.params, &e.x));
            (p >= 0.5) == (e.y >= 0.5)
        })
        .count();
    correct as f64 / test.len() as f64
}

fn logistic_bias_replication(
    cfg: &ExperimentConfig,
    method: &str,
    seed: u64,
) -> AcquisitionHistory {
    let mut data_rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 1));
    let task = PpcaTask::sample_scaled(
        cfg.sim.input_dim,
        cfg.sim.latent_dim,
        cfg.sim.noise_sd,
        cfg.sim.theta_scale,
        &mut data_rng,
    );
    let mut pool_examples = gen_ppca_logistic(&task, cfg.pool.pool_size, &mut data_rng);
    let test = gen_ppca_logistic(&task, cfg.pool.test_size, &mut data_rng);
    let targets: Vec<Vec<f64>> = test
        .iter()
        .take(cfg.pool.target_size.min(test.len()))
        .map(|e| e.x.clone())
        .collect();
    let initial = balanced_initial(&mut pool_examples, cfg.pool.initial_labels.max(2));

    let pool: Vec<Vec<f64>> = pool_examples.iter().map(|e| e.x.clone()).collect();
    let labels: Vec<f64> = pool_examples.iter().map(|e| e.y).collect();
    let template = GlmTemplate::new(
        Family::Bernoulli,
        Arc::new(IdentityFeatures {
            dim: cfg.sim.input_dim,
        }),
        cfg.model.ridge,
    );
    // the oracle variant uses the true parameters everywhere θ₀ appears:
    // target means in the goal and the per-candidate bias factor
    let known_means = (method == "true_bias").then(|| {
        targets
            .iter()
            .map(|x| task.label_probability(x))
            .collect::<Vec<f64>>()
    });
    let goal =
        GoalObjective::new(GoalKind::Nll { targets, known_means }).expect("non-empty targets");
    let score = match method {
        "true_bias" => ScoreRule::ParamBias(BiasSource::True(task.theta_true.clone())),
        "jackknife" => ScoreRule::ParamBias(BiasSource::Jackknife),
        "one_bias" => ScoreRule::ParamBias(BiasSource::Ones),
        _ => ScoreRule::Random,
    };
    let observe_fn = move |id: usize, _x: &[f64], _rng: &mut ChaCha20Rng| labels[id];
    let metric_fn = move |view: &StepView<'_>| classification_accuracy(view, &test);
    let problem = LoopProblem {
        initial_labeled: initial,
        pool,
        observe: &observe_fn,
        metric: &metric_fn,
    };
    let loop_cfg = loop_config(cfg, score);
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, method_stream(method)));
    run_loop(&problem, &template, &goal, &loop_cfg, &mut rng)
}

fn noisy_opt_replication(cfg: &ExperimentConfig, method: &str, seed: u64) -> AcquisitionHistory {
    let objective =
        objective_by_name(&cfg.problem, cfg.opt.sigma).expect("validated objective name");
    let bounds = objective.bounds.clone();
    let dim = bounds.len();
    let pool = halton_in_box(&bounds, cfg.opt.candidate_pool);

    // the initial design is shared by every method of this replication
    let mut init_rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 11));
    let initial: Vec<Example> = (0..cfg.opt.initial_observations)
        .map(|_| {
            let x: Vec<f64> = bounds
                .iter()
                .map(|(lo, hi)| lo + (hi - lo) * init_rng.gen::<f64>())
                .collect();
            let y = observe(&objective, &x, &mut init_rng);
            Example::new(x, y)
        })
        .collect();

    let optimum = objective.optimum_value();
    let regret_of = {
        let objective = &objective;
        move |x: &[f64]| (objective.evaluate(x) - optimum).max(0.0)
    };
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, method_stream(method)));

    if method == "goimda" {
        let diameter: f64 = bounds
            .iter()
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt();
        let base_scale = diameter / (dim as f64).sqrt();
        let centers = halton_in_box_skip(&bounds, cfg.model.rbf_centers, 101);
        let features = Arc::new(RbfFeatures::new(
            centers,
            cfg.model.rbf_lengthscale * base_scale,
            true,
        ));
        let mut template = GlmTemplate::new(Family::GaussianUnit, features, cfg.model.ridge);
        template.newton = NewtonOptions {
            tol: 1e-10,
            max_iters: 50,
        };
        let domain = DomainBox::new(bounds.clone()).expect("valid objective box");
        let inner = InnerOptConfig {
            restarts: cfg.opt.restarts,
            ..Default::default()
        };
        let goal = GoalObjective::new(GoalKind::OptValue { domain, inner }).expect("valid goal");
        let observe_fn = {
            let objective = &objective;
            move |_id: usize, x: &[f64], rng: &mut ChaCha20Rng| observe(objective, x, rng)
        };
        let metric_fn = move |view: &StepView<'_>| match view.recommended {
            Some(x) => regret_of(x),
            None => f64::NAN,
        };
        let problem = LoopProblem {
            initial_labeled: initial,
            pool,
            observe: &observe_fn,
            metric: &metric_fn,
        };
        let loop_cfg = loop_config(cfg, ScoreRule::OutputBias);
        run_loop(&problem, &template, &goal, &loop_cfg, &mut rng)
    } else {
        let kind = AcqKind::parse(method).expect("validated method name");
        let observe_fn = {
            let objective = &objective;
            move |_id: usize, x: &[f64], rng: &mut ChaCha20Rng| observe(objective, x, rng)
        };
        let metric_fn =
            move |recommended: &[f64], _gp: &GaussianProcess, _step: usize| regret_of(recommended);
        let problem = BoProblem {
            initial,
            pool,
            observe: &observe_fn,
            metric: &metric_fn,
        };
        let bo_cfg = BoConfig {
            budget: cfg.budget,
            beta: cfg.gp.beta,
            noise_sd: if cfg.gp.noise_sd < 0.0 {
                Some(cfg.opt.sigma)
            } else {
                Some(cfg.gp.noise_sd)
            },
            bounds,
        };
        bo_loop(&problem, kind, &bo_cfg, &mut rng)
    }
}

fn al_toy_replication(cfg: &ExperimentConfig, method: &str, seed: u64) -> AcquisitionHistory {
    let mut data_rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 21));
    // smooth XOR-style conditional: p(y=1 | x) = sigmoid(3 x1 x2)
    let draw = |rng: &mut ChaCha20Rng| -> Example {
        let x: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let p = sigmoid(3.0 * x[0] * x[1]);
        let y = f64::from(rng.gen::<f64>() < p);
        Example::new(x, y)
    };
    let mut pool_examples: Vec<Example> =
        (0..cfg.pool.pool_size).map(|_| draw(&mut data_rng)).collect();
    let test: Vec<Example> = (0..cfg.pool.test_size).map(|_| draw(&mut data_rng)).collect();
    let targets: Vec<Vec<f64>> = test
        .iter()
        .take(cfg.pool.target_size.min(test.len()))
        .map(|e| e.x.clone())
        .collect();
    let initial = balanced_initial(&mut pool_examples, cfg.pool.initial_labels.max(2));
    let pool: Vec<Vec<f64>> = pool_examples.iter().map(|e| e.x.clone()).collect();
    let labels: Vec<f64> = pool_examples.iter().map(|e| e.y).collect();

    let mlp = Arc::new(Mlp::new(2, &cfg.model.hidden));
    let adam = AdamConfig {
        learning_rate: cfg.model.learning_rate,
        epochs: cfg.model.epochs,
        ..Default::default()
    };
    let mut template = MlpTemplate::new(Family::Bernoulli, mlp, adam);
    template.shared_init = Some(derive_seed(seed, 23));

    let goal = GoalObjective::new(GoalKind::Nll { targets, known_means: None }).expect("non-empty targets");
    let score = match method {
        "goimda" => ScoreRule::OutputBias,
        _ => ScoreRule::Random,
    };
    let observe_fn = move |id: usize, _x: &[f64], _rng: &mut ChaCha20Rng| labels[id];
    let metric_fn = move |view: &StepView<'_>| classification_accuracy(view, &test);
    let problem = LoopProblem {
        initial_labeled: initial,
        pool,
        observe: &observe_fn,
        metric: &metric_fn,
    };
    let loop_cfg = loop_config(cfg, score);
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, method_stream(method)));
    run_loop(&problem, &template, &goal, &loop_cfg, &mut rng)
}

fn run_replication(cfg: &ExperimentConfig, method: &str, seed: u64) -> AcquisitionHistory {
    match cfg.experiment {
        ExperimentKind::LogisticBias => logistic_bias_replication(cfg, method, seed),
        ExperimentKind::NoisyOpt => noisy_opt_replication(cfg, method, seed),
        ExperimentKind::AlToy => al_toy_replication(cfg, method, seed),
    }
}

fn experiment_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::LogisticBias => "logistic_bias",
        ExperimentKind::NoisyOpt => "noisy_opt",
        ExperimentKind::AlToy => "al_toy",
    }
}

fn summary_csv(cfg: &ExperimentConfig, rows: &[MetricRow]) -> String {
    let mut out = String::from("experiment,method,step,metric_name,value\n");
    let experiment = experiment_name(cfg.experiment);
    let metric = cfg.experiment.metric_name();
    for method in &cfg.methods {
        let max_step = rows
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| r.step)
            .max();
        let Some(max_step) = max_step else { continue };
        for step in 0..=max_step {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| &r.method == method && r.step == step && r.value.is_finite())
                .map(|r| r.value)
                .collect();
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let (lo, hi) = if values.len() >= 2 {
                let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                    method_stream(method),
                    step as u64,
                ));
                bootstrap_ci(&values, 2_000, 0.95, &mut rng)
            } else {
                (mean, mean)
            };
            let mut sorted = values;
            sorted.sort_by(f64::total_cmp);
            let stats = [
                ("mean", mean),
                ("ci_lo", lo),
                ("ci_hi", hi),
                ("q25", quantile(&sorted, 0.25)),
                ("q50", quantile(&sorted, 0.5)),
                ("q75", quantile(&sorted, 0.75)),
            ];
            for (name, value) in stats {
                out.push_str(&format!(
                    "{experiment},{method},{step},{metric}_{name},{value}\n"
                ));
            }
        }
    }
    out
}

/// Runs every (method, replication) pair, writes the metrics CSV, per-run
/// history CSVs, the summary CSV, and the manifest under the output
/// directory, and returns everything in memory as well. Replication failures
/// are recorded and do not stop the run.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    write_svg: bool,
) -> Result<RunArtifacts, HarnessError> {
    let root = std::env::var(OUTPUT_ROOT_ENV).unwrap_or_else(|_| ".".to_string());
    let out_dir = Path::new(&root).join(&cfg.output);
    std::fs::create_dir_all(out_dir.join("histories"))?;

    let jobs: Vec<(String, usize, u64)> = cfg
        .methods
        .iter()
        .flat_map(|method| {
            cfg.seeds
                .iter()
                .enumerate()
                .map(move |(rep, &seed)| (method.clone(), rep, seed))
        })
        .collect();

    let execute = || -> Vec<ReplicationOutcome> {
        jobs.par_iter()
            .map(|(method, rep, seed)| ReplicationOutcome {
                method: method.clone(),
                replication: *rep,
                seed: *seed,
                history: run_replication(cfg, method, *seed),
            })
            .collect()
    };
    let outcomes = if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
        pool.install(execute)
    } else {
        execute()
    };

    let experiment = experiment_name(cfg.experiment);
    let metric_name = cfg.experiment.metric_name();
    let mut metric_rows = Vec::new();
    let mut failed = 0usize;
    for outcome in &outcomes {
        if matches!(outcome.history.status, LoopStatus::Aborted { .. }) {
            failed += 1;
        }
        for record in &outcome.history.records {
            metric_rows.push(MetricRow {
                experiment: experiment.to_string(),
                method: outcome.method.clone(),
                replication: outcome.replication,
                step: record.step,
                metric_name: metric_name.to_string(),
                value: record.metric,
                seed: outcome.seed,
            });
        }
    }

    std::fs::write(out_dir.join("metrics_raw.csv"), metric_rows_to_csv(&metric_rows))?;
    std::fs::write(out_dir.join("metrics_summary.csv"), summary_csv(cfg, &metric_rows))?;
    let manifest = Manifest::new(cfg.clone());
    std::fs::write(out_dir.join("manifest.toml"), manifest.to_toml()?)?;
    for outcome in &outcomes {
        let text = write_history_csv(
            experiment,
            &cfg.problem,
            &outcome.method,
            outcome.replication,
            outcome.seed,
            &outcome.history,
        );
        let file = format!("{}_rep{}.csv", outcome.method, outcome.replication);
        std::fs::write(out_dir.join("histories").join(file), text)?;
    }
    if write_svg {
        let svg = super::svg::curves_from_rows(cfg, &metric_rows);
        std::fs::write(out_dir.join("curves.svg"), svg)?;
    }

    Ok(RunArtifacts {
        out_dir,
        metric_rows,
        outcomes,
        failed,
    })
}
