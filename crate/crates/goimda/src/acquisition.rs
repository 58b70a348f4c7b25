//! The goal-oriented influence scoring rule and the outer acquisition loop.
//!
//! Each step refits the main model and the jackknife ensemble on the labeled
//! set, solves once for the goal direction u = Ĥ⁻¹∇G, scores every pool
//! candidate with a dot product, acquires the argmax, and repeats. One solve
//! per step — never one per candidate.
//!
//! The loop is sequential by construction (each acquisition depends on the
//! refit); candidate scoring over a snapshot is pure and thread-safe.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::diffcore::{Example, HessianKind, ParameterVector};
use crate::expfam::{ExpFamLoss, Family, NaturalParamModel};
use crate::glm::{fit_glm_with, glm_hessian, NewtonOptions};
use crate::goals::{
    goal_gradient, goal_value, GoalError, GoalGradientReport, GoalKind, GoalObjective,
    RecommendedDesign,
};
use crate::ihvp::{direct_solve, solve_cg, solve_lissa, IhvpConfig, IhvpError, LossHvpOracle, SolveDiagnostics};
use crate::model::{ModelError, ModelTemplate};
use crate::surrogate::{train_ensemble, JackknifeEnsemble, SurrogateError};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("pool exhausted")]
    EmptyPool,
    #[error("expected {expected} scores, got {got}")]
    ScoreCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Goal(#[from] GoalError),
    #[error(transparent)]
    Solver(#[from] IhvpError),
    #[error(transparent)]
    Glm(#[from] crate::glm::GlmError),
}

/// How the goal direction solve is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// CG below 10k examples, LiSSA above.
    #[default]
    Auto,
    Cg,
    Lissa,
    /// Dense factorization; testing/small instances.
    Dense,
}

/// Where the parameter-bias vector comes from in the GLM scoring rule.
#[derive(Debug, Clone)]
pub enum BiasSource {
    /// The exact θ − θ₀ (simulation studies where θ₀ is known).
    True(ParameterVector),
    /// Jackknife estimate θ − mean(member parameters).
    Jackknife,
    /// All-ones vector: the bias-agnostic leverage rule.
    Ones,
}

/// Candidate scoring rule used by the loop.
#[derive(Debug, Clone, Default)]
pub enum ScoreRule {
    /// uᵀ∇η(x_c) · (A′(η(x_c)) − surrogate mean): the output-space bias form.
    #[default]
    OutputBias,
    /// uᵀ∇η(x_c) · ∇η(x_c)ᵀb · A″(η(x_c)): the parameter-bias form.
    ParamBias(BiasSource),
    /// Uniformly random acquisitions (baseline).
    Random,
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub budget: usize,
    pub ensemble_size: usize,
    pub ihvp: IhvpConfig,
    pub solver: SolverKind,
    pub hessian: HessianKind,
    pub score: ScoreRule,
    /// Monte-Carlo draws for generic-path expectations (Gaussian labels).
    pub n_draws: usize,
    /// Stop once the goal value estimate drops to this level (off by default).
    pub early_stop_goal: Option<f64>,
    pub warm_start: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            budget: 0,
            ensemble_size: 5,
            ihvp: IhvpConfig::default(),
            solver: SolverKind::Auto,
            hessian: HessianKind::Exact,
            score: ScoreRule::OutputBias,
            n_draws: 256,
            early_stop_goal: None,
            warm_start: true,
        }
    }
}

/// A pool candidate with a stable identity (its index at loop start).
#[derive(Debug, Clone)]
pub struct PoolItem {
    pub id: usize,
    pub x: Vec<f64>,
}

/// Snapshot handed to the metric callback each step.
pub struct StepView<'a> {
    pub model: &'a dyn NaturalParamModel,
    pub family: Family,
    pub params: &'a ParameterVector,
    pub ensemble: &'a JackknifeEnsemble,
    pub recommended: Option<&'a [f64]>,
    pub step: usize,
}

/// The problem the loop drives: initial data, the candidate pool, the label
/// source, and the per-step evaluation metric.
pub struct LoopProblem<'a> {
    pub initial_labeled: Vec<Example>,
    pub pool: Vec<Vec<f64>>,
    /// (candidate id, input, rng) → observed label.
    pub observe: &'a (dyn Fn(usize, &[f64], &mut ChaCha20Rng) -> f64 + Sync),
    /// Per-step metric recorded in the history (accuracy, regret, ...).
    pub metric: &'a (dyn Fn(&StepView<'_>) -> f64 + Sync),
}

/// Compact solver diagnostics stored per history record.
#[derive(Debug, Clone, Default)]
pub struct SolverSummary {
    pub iterations: usize,
    pub residual: f64,
    pub damping: f64,
    pub converged: bool,
}

impl From<&SolveDiagnostics> for SolverSummary {
    fn from(d: &SolveDiagnostics) -> Self {
        Self {
            iterations: d.iterations,
            residual: d.residual_norm,
            damping: d.effective_damping,
            converged: d.converged,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub chosen_id: Option<usize>,
    pub chosen_input: Option<Vec<f64>>,
    pub observed_label: Option<f64>,
    pub score: Option<f64>,
    pub goal_value: Option<f64>,
    pub metric: f64,
    pub recommended: Option<Vec<f64>>,
    pub solver: Option<SolverSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoopStatus {
    Completed,
    PoolExhausted,
    EarlyStopped,
    Aborted { step: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct AcquisitionHistory {
    pub records: Vec<StepRecord>,
    pub status: LoopStatus,
}

impl AcquisitionHistory {
    /// Number of acquisitions actually made.
    pub fn acquisitions(&self) -> usize {
        self.records.iter().filter(|r| r.chosen_id.is_some()).count()
    }
}

/// Solves u = Ĥ⁻¹ ∇G once per step, sign-adjusted for the goal sense. Returns
/// the direction, solver diagnostics, and the goal-gradient report (which may
/// carry the recommended design).
pub fn precompute_goal_direction(
    template: &dyn ModelTemplate,
    labeled: &[Example],
    params: &ParameterVector,
    ensemble: &JackknifeEnsemble,
    goal: &GoalObjective,
    cfg: &LoopConfig,
    design: Option<&RecommendedDesign>,
    rng: &mut ChaCha20Rng,
) -> Result<(ParameterVector, SolveDiagnostics, GoalGradientReport), LoopError> {
    let model = template.model();
    let (grad, report) = goal_gradient(goal, model.as_ref(), params, template.family(), ensemble, design)?;
    if grad.max_norm() == 0.0 {
        return Ok((grad, SolveDiagnostics::default(), report));
    }
    let loss = ExpFamLoss::new(template.family(), model.clone());
    let oracle = LossHvpOracle {
        batch_size: cfg.ihvp.lissa_batch,
        kind: cfg.hessian,
        ridge: template.ridge(),
        ..LossHvpOracle::new(&loss, params, labeled)
    };
    let solver = match cfg.solver {
        SolverKind::Auto => {
            if labeled.len() <= 10_000 {
                SolverKind::Cg
            } else {
                SolverKind::Lissa
            }
        }
        other => other,
    };
    let (u, diagnostics) = match solver {
        SolverKind::Cg | SolverKind::Auto => solve_cg(&oracle, grad.as_slice(), &cfg.ihvp)?,
        SolverKind::Lissa => solve_lissa(&oracle, grad.as_slice(), &cfg.ihvp, rng)?,
        SolverKind::Dense => {
            let h = crate::diffcore::dense_hessian_with(
                &loss,
                params,
                labeled,
                cfg.hessian,
                crate::diffcore::DEFAULT_DENSE_CAP,
            )
            .map_err(|_| IhvpError::DimensionMismatch {
                oracle: params.len(),
                vector: grad.len(),
            })?;
            let mut h = h;
            h.add_diagonal(template.ridge());
            let u = direct_solve(&h, grad.as_slice(), cfg.ihvp.damping)?;
            (u, SolveDiagnostics::default())
        }
    };
    let direction = params.with_values(u).scale(goal.sense_sign());
    Ok((direction, diagnostics, report))
}

/// Output-space fast path: uᵀ∇η(x_c) · (A′(η(x_c)) − surrogate mean at x_c).
pub fn goi_score(
    model: &dyn NaturalParamModel,
    family: Family,
    params: &ParameterVector,
    ensemble: &JackknifeEnsemble,
    direction: &ParameterVector,
    candidate: &[f64],
) -> f64 {
    let eta = model.eta(params, candidate);
    let sensitivity = model.eta_grad(params, candidate);
    let bias = family.mean(eta) - ensemble.surrogate_mean(candidate);
    direction.dot(&sensitivity) * bias
}

/// Generic expectation path: E over surrogate labels of uᵀ∇ℓ(θ; (x_c, y)).
/// Agrees with [`goi_score`] exactly for Bernoulli (closed-form expectation)
/// and up to Monte-Carlo error for Gaussian labels.
pub fn goi_score_generic<R: Rng + ?Sized>(
    model: &dyn NaturalParamModel,
    family: Family,
    params: &ParameterVector,
    ensemble: &JackknifeEnsemble,
    direction: &ParameterVector,
    candidate: &[f64],
    n_draws: usize,
    rng: &mut R,
) -> f64 {
    let eta = model.eta(params, candidate);
    let mean = family.mean(eta);
    let projected = direction.dot(&model.eta_grad(params, candidate));
    ensemble.expected_over_labels(candidate, &|y| projected * (mean - y), n_draws, rng)
}

/// Parameter-bias form: uᵀ∇η(x_c) · ∇η(x_c)ᵀ b · A″(η(x_c)). For raw-feature
/// GLMs the sensitivity is the candidate itself.
pub fn goi_score_param_bias(
    model: &dyn NaturalParamModel,
    family: Family,
    params: &ParameterVector,
    direction: &ParameterVector,
    bias: &ParameterVector,
    candidate: &[f64],
) -> f64 {
    let eta = model.eta(params, candidate);
    let sensitivity = model.eta_grad(params, candidate);
    direction.dot(&sensitivity) * sensitivity.dot(bias) * family.variance(eta)
}

/// Argmax with ties broken by the lowest index.
pub fn select_next(scores: &[f64]) -> Result<usize, LoopError> {
    if scores.is_empty() {
        return Err(LoopError::EmptyPool);
    }
    let mut best = 0usize;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

struct RefitState {
    params: ParameterVector,
    ensemble: JackknifeEnsemble,
}

fn refit(
    template: &dyn ModelTemplate,
    labeled: &[Example],
    warm: Option<&ParameterVector>,
    ensemble_size: usize,
    rng: &mut ChaCha20Rng,
) -> Result<RefitState, LoopError> {
    let fit_seed: u64 = rng.gen();
    let (params, _report) = template.fit(labeled, warm, fit_seed)?;
    let r_eff = ensemble_size.clamp(2, labeled.len().max(2));
    let ensemble = train_ensemble(labeled, r_eff, template, rng)?;
    Ok(RefitState { params, ensemble })
}

/// Runs the acquisition loop: refit, score, select, observe, augment, until
/// the budget is exhausted (or the pool empties / the optional goal threshold
/// is hit). Every refit, score, and observation is driven by `rng`, so a run
/// replays exactly given the same config and seed.
pub fn run_loop(
    problem: &LoopProblem<'_>,
    template: &dyn ModelTemplate,
    goal: &GoalObjective,
    cfg: &LoopConfig,
    rng: &mut ChaCha20Rng,
) -> AcquisitionHistory {
    let mut records = Vec::with_capacity(cfg.budget + 1);
    let mut labeled = problem.initial_labeled.clone();
    let mut pool: Vec<PoolItem> = problem
        .pool
        .iter()
        .enumerate()
        .map(|(id, x)| PoolItem { id, x: x.clone() })
        .collect();
    let model = template.model();
    let family = template.family();

    let mut warm: Option<ParameterVector> = None;
    let mut status = LoopStatus::Completed;
    let mut step = 0usize;
    loop {
        let state = match refit(template, &labeled, warm.as_ref(), cfg.ensemble_size, rng) {
            Ok(s) => s,
            Err(err) => {
                status = LoopStatus::Aborted {
                    step,
                    message: err.to_string(),
                };
                break;
            }
        };
        if cfg.warm_start {
            warm = Some(state.params.clone());
        }

        // the recommended design doubles as the optimization metric input
        let design = match &goal.kind {
            GoalKind::OptValue { domain, inner } => {
                match crate::goals::recommend_minimizer(
                    model.as_ref(),
                    &state.params,
                    family,
                    domain,
                    inner,
                ) {
                    Ok(d) => Some(d),
                    Err(err) => {
                        status = LoopStatus::Aborted {
                            step,
                            message: err.to_string(),
                        };
                        break;
                    }
                }
            }
            _ => None,
        };
        let recommended = design.as_ref().map(|d| d.x_star.clone());
        let view = StepView {
            model: model.as_ref(),
            family,
            params: &state.params,
            ensemble: &state.ensemble,
            recommended: recommended.as_deref(),
            step,
        };
        let metric = (problem.metric)(&view);
        let goal_value_estimate = goal_value(
            goal,
            model.as_ref(),
            &state.params,
            family,
            &state.ensemble,
            design.as_ref(),
        )
        .ok();

        let reached_goal = matches!(
            (cfg.early_stop_goal, goal_value_estimate),
            (Some(threshold), Some(value)) if value <= threshold
        );
        if step >= cfg.budget || pool.is_empty() || reached_goal {
            records.push(StepRecord {
                step,
                chosen_id: None,
                chosen_input: None,
                observed_label: None,
                score: None,
                goal_value: goal_value_estimate,
                metric,
                recommended,
                solver: None,
            });
            if reached_goal && step < cfg.budget {
                status = LoopStatus::EarlyStopped;
            } else if pool.is_empty() && step < cfg.budget {
                status = LoopStatus::PoolExhausted;
            }
            break;
        }

        // score the pool and acquire
        let (position, score, solver) = match &cfg.score {
            ScoreRule::Random => {
                let position = rng.gen_range(0..pool.len());
                (position, f64::NAN, None)
            }
            rule => {
                let direction = precompute_goal_direction(
                    template,
                    &labeled,
                    &state.params,
                    &state.ensemble,
                    goal,
                    cfg,
                    design.as_ref(),
                    rng,
                );
                let (u, diagnostics, _) = match direction {
                    Ok(v) => v,
                    Err(err) => {
                        status = LoopStatus::Aborted {
                            step,
                            message: err.to_string(),
                        };
                        break;
                    }
                };
                let bias = match rule {
                    ScoreRule::ParamBias(BiasSource::Jackknife) => {
                        match state.ensemble.bias_estimate(&state.params) {
                            Ok(b) => Some(b),
                            Err(err) => {
                                status = LoopStatus::Aborted {
                                    step,
                                    message: err.to_string(),
                                };
                                break;
                            }
                        }
                    }
                    ScoreRule::ParamBias(BiasSource::True(theta0)) => {
                        Some(state.params.sub(theta0))
                    }
                    ScoreRule::ParamBias(BiasSource::Ones) => {
                        Some(state.params.with_values(vec![1.0; state.params.len()]))
                    }
                    _ => None,
                };
                let scores: Vec<f64> = pool
                    .iter()
                    .map(|item| match (&cfg.score, &bias) {
                        (ScoreRule::ParamBias(_), Some(b)) => goi_score_param_bias(
                            model.as_ref(),
                            family,
                            &state.params,
                            &u,
                            b,
                            &item.x,
                        ),
                        _ => goi_score(
                            model.as_ref(),
                            family,
                            &state.params,
                            &state.ensemble,
                            &u,
                            &item.x,
                        ),
                    })
                    .collect();
                match select_next(&scores) {
                    Ok(position) => (position, scores[position], Some(SolverSummary::from(&diagnostics))),
                    Err(err) => {
                        status = LoopStatus::Aborted {
                            step,
                            message: err.to_string(),
                        };
                        break;
                    }
                }
            }
        };

        let item = pool.remove(position);
        let label = (problem.observe)(item.id, &item.x, rng);
        records.push(StepRecord {
            step,
            chosen_id: Some(item.id),
            chosen_input: Some(item.x.clone()),
            observed_label: Some(label),
            score: if score.is_nan() { None } else { Some(score) },
            goal_value: goal_value_estimate,
            metric,
            recommended,
            solver,
        });
        labeled.push(Example::new(item.x, label));
        step += 1;
    }
    AcquisitionHistory { records, status }
}

/// First-order influence against a weighted-refit oracle on a small GLM
/// instance. Returns (approx, oracle): the linearized change −I·ε and the
/// exact change G(θ_ε) − G(θ) where θ_ε refits with the candidate appended at
/// weight ε.
#[allow(clippy::too_many_arguments)]
pub fn influence_vs_retrain(
    template: &crate::model::GlmTemplate,
    labeled: &[Example],
    ensemble: &JackknifeEnsemble,
    goal: &GoalObjective,
    candidate: &Example,
    eps: f64,
) -> Result<(f64, f64), LoopError> {
    let tight = NewtonOptions {
        tol: 1e-13,
        max_iters: 300,
    };
    let featurized = template.featurize(labeled);
    let dim = template.features.output_dim();
    let init = ParameterVector::flat(vec![0.0; dim]);
    let (base_model, _) = fit_glm_with(&featurized, template.family, template.ridge, &init, tight)?;
    let theta = base_model.theta.clone();

    let model = template.model();
    let (goal_grad, _) = goal_gradient(
        goal,
        model.as_ref(),
        &theta,
        template.family,
        ensemble,
        None,
    )?;

    let phi_c = template.features.eval(&candidate.x);
    let eta_c = crate::diffcore::dot(&phi_c, theta.as_slice());
    let residual = template.family.mean(eta_c) - candidate.y;
    let loss_grad: Vec<f64> = phi_c.iter().map(|f| residual * f).collect();

    let hessian = glm_hessian(&base_model, &featurized);
    let solved = direct_solve(&hessian, &loss_grad, 0.0)?;
    let influence = crate::diffcore::dot(goal_grad.as_slice(), &solved);
    let approx = -influence * eps;

    // weighted refit: (1/n) Σ ℓ_i + ε ℓ_c + (ridge/2)|θ|²
    let theta_eps = weighted_refit(
        template.family,
        &featurized,
        &phi_c,
        candidate.y,
        eps,
        template.ridge,
        &theta,
    )?;
    let base_value = goal_value(
        goal,
        model.as_ref(),
        &theta,
        template.family,
        ensemble,
        None,
    )?;
    let shifted_value = goal_value(
        goal,
        model.as_ref(),
        &theta_eps,
        template.family,
        ensemble,
        None,
    )?;
    Ok((approx, shifted_value - base_value))
}

fn weighted_refit(
    family: Family,
    data: &[Example],
    phi_c: &[f64],
    y_c: f64,
    eps: f64,
    ridge: f64,
    warm: &ParameterVector,
) -> Result<ParameterVector, LoopError> {
    let dim = warm.len();
    let n = data.len() as f64;
    let mut theta = warm.as_slice().to_vec();
    for _ in 0..300 {
        let mut grad = vec![0.0; dim];
        for e in data {
            let eta = crate::diffcore::dot(&e.x, &theta);
            let r = family.mean(eta) - e.y;
            for (g, x) in grad.iter_mut().zip(&e.x) {
                *g += r * x / n;
            }
        }
        let eta_c = crate::diffcore::dot(phi_c, &theta);
        let r_c = family.mean(eta_c) - y_c;
        for ((g, x), t) in grad.iter_mut().zip(phi_c).zip(&theta) {
            *g += eps * r_c * x + ridge * t;
        }
        if crate::diffcore::max_norm(&grad) <= 1e-13 {
            break;
        }
        let mut hess = nalgebra::DMatrix::zeros(dim, dim);
        for e in data {
            let w = family.variance(crate::diffcore::dot(&e.x, &theta)) / n;
            for i in 0..dim {
                for j in 0..dim {
                    hess[(i, j)] += w * e.x[i] * e.x[j];
                }
            }
        }
        let w_c = eps * family.variance(eta_c);
        for i in 0..dim {
            for j in 0..dim {
                hess[(i, j)] += w_c * phi_c[i] * phi_c[j];
            }
            hess[(i, i)] += ridge;
        }
        let rhs = nalgebra::DVector::from_iterator(dim, grad.iter().map(|g| -g));
        let Some(chol) = hess.cholesky() else {
            return Err(LoopError::Solver(IhvpError::Singular { damping: ridge }));
        };
        let step = chol.solve(&rhs);
        for (t, s) in theta.iter_mut().zip(step.iter()) {
            *t += s;
        }
    }
    Ok(warm.with_values(theta))
}
