//! Goal functionals G(θ) and their parameter gradients.
//!
//! Four goals ship: the expected value at the model's recommended minimizer
//! (optimization tasks), and three target-set functionals for supervised
//! tasks (expected NLL, focal loss, predictive entropy). Target-set goals sum
//! over the target inputs without normalization; only the argmax over
//! candidates matters downstream, so the scale convention is free and
//! documented here.
//!
//! Expectations under the unknown data-generating distribution are supplied
//! by the jackknife ensemble. The entropy goal is the exception: it is an
//! expectation under the model itself and never touches the surrogate.

use thiserror::Error;

use crate::diffcore::{DenseMatrix, ParameterVector};
use crate::expfam::{Family, NaturalParamModel};
use crate::halton::halton_in_box;
use crate::surrogate::JackknifeEnsemble;

#[derive(Debug, Error)]
pub enum GoalError {
    #[error("target set must be non-empty")]
    EmptyTargetSet,
    #[error("focal exponent must be non-negative, got {0}")]
    InvalidGamma(f64),
    #[error("invalid box: lower bound not below upper bound in dimension {0}")]
    InvalidBox(usize),
    #[error("focal goal requires the Bernoulli family")]
    FocalUnsupported,
    #[error("inner optimizer produced no finite candidate")]
    InnerOptFailed,
    #[error("recommended design did not converge")]
    DesignNotConverged,
    #[error("recommended design sits on the box boundary")]
    BoundaryDesign,
    #[error("inner Hessian at the recommended design is singular")]
    SingularInnerHessian,
}

/// Per-dimension search bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub bounds: Vec<(f64, f64)>,
}

impl DomainBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, GoalError> {
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(GoalError::InvalidBox(i));
            }
        }
        Ok(Self { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (xi, (lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    /// Dimensions whose coordinate sits within `tol` of a bound.
    pub fn active_dims(&self, x: &[f64], tol: f64) -> Vec<usize> {
        x.iter()
            .zip(&self.bounds)
            .enumerate()
            .filter(|(_, (xi, (lo, hi)))| (**xi - lo).abs() <= tol || (*hi - **xi).abs() <= tol)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GoalSense {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Clone)]
pub enum GoalKind {
    /// Expected property value at the model's recommended minimizer.
    OptValue {
        domain: DomainBox,
        inner: InnerOptConfig,
    },
    /// Expected NLL over an unlabeled target set. Label means come from the
    /// surrogate unless `known_means` supplies them (oracle/simulation runs).
    Nll {
        targets: Vec<Vec<f64>>,
        known_means: Option<Vec<f64>>,
    },
    /// Focal-weighted expected NLL (Bernoulli only).
    Focal { targets: Vec<Vec<f64>>, gamma: f64 },
    /// Predictive Shannon entropy over the target set, under the model itself.
    Entropy { targets: Vec<Vec<f64>> },
}

#[derive(Clone)]
pub struct GoalObjective {
    pub kind: GoalKind,
    pub sense: GoalSense,
}

impl GoalObjective {
    pub fn new(kind: GoalKind) -> Result<Self, GoalError> {
        match &kind {
            GoalKind::OptValue { .. } => {}
            GoalKind::Nll {
                targets,
                known_means,
            } => {
                if targets.is_empty() {
                    return Err(GoalError::EmptyTargetSet);
                }
                if let Some(means) = known_means {
                    if means.len() != targets.len() {
                        return Err(GoalError::EmptyTargetSet);
                    }
                }
            }
            GoalKind::Entropy { targets } => {
                if targets.is_empty() {
                    return Err(GoalError::EmptyTargetSet);
                }
            }
            GoalKind::Focal { targets, gamma } => {
                if targets.is_empty() {
                    return Err(GoalError::EmptyTargetSet);
                }
                if *gamma < 0.0 {
                    return Err(GoalError::InvalidGamma(*gamma));
                }
            }
        }
        Ok(Self {
            kind,
            sense: GoalSense::Minimize,
        })
    }

    pub fn sense_sign(&self) -> f64 {
        match self.sense {
            GoalSense::Minimize => 1.0,
            GoalSense::Maximize => -1.0,
        }
    }
}

/// Multi-start projected-gradient settings for the recommended-design search.
#[derive(Debug, Clone)]
pub struct InnerOptConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Convergence threshold on the projected-gradient max-norm.
    pub grad_tol: f64,
    /// Tolerance for treating a coordinate as sitting on the boundary.
    pub boundary_tol: f64,
}

impl Default for InnerOptConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iters: 500,
            grad_tol: 1e-6,
            boundary_tol: 1e-9,
        }
    }
}

/// The model's recommended minimizer of its own predictive mean.
#[derive(Debug, Clone)]
pub struct RecommendedDesign {
    pub x_star: Vec<f64>,
    /// Model predictive mean at `x_star`.
    pub inner_value: f64,
    pub converged: bool,
    pub restarts_used: usize,
}

fn projected_gradient(x: &[f64], grad: &[f64], domain: &DomainBox, tol: f64) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .zip(&domain.bounds)
        .map(|((xi, gi), (lo, hi))| {
            if (xi - lo).abs() <= tol && *gi > 0.0 {
                0.0
            } else if (hi - xi).abs() <= tol && *gi < 0.0 {
                0.0
            } else {
                *gi
            }
        })
        .collect()
}

/// Minimizes the model's predictive mean A′(η_θ(x)) over the box by projected
/// gradient descent from low-discrepancy restarts. Deterministic.
pub fn recommend_minimizer(
    model: &dyn NaturalParamModel,
    params: &ParameterVector,
    family: Family,
    domain: &DomainBox,
    cfg: &InnerOptConfig,
) -> Result<RecommendedDesign, GoalError> {
    let mean_at = |x: &[f64]| family.mean(model.eta(params, x));
    let grad_at = |x: &[f64]| {
        let eta = model.eta(params, x);
        let mut g = model.eta_input_grad(params, x);
        let scale = family.variance(eta);
        for gi in &mut g {
            *gi *= scale;
        }
        g
    };
    let widths: Vec<f64> = domain.bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let max_width = widths.iter().cloned().fold(0.0f64, f64::max);

    let starts = halton_in_box(&domain.bounds, cfg.restarts.max(1));
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for start in starts {
        let mut x = start;
        let mut value = mean_at(&x);
        if !value.is_finite() {
            continue;
        }
        let mut converged = false;
        for _ in 0..cfg.max_iters {
            let grad = grad_at(&x);
            let pg = projected_gradient(&x, &grad, domain, cfg.boundary_tol);
            let pg_norm = crate::diffcore::max_norm(&pg);
            if pg_norm <= cfg.grad_tol {
                converged = true;
                break;
            }
            // backtracking step along the negative gradient
            let mut step = 0.5 * max_width / pg_norm.max(1e-12);
            let mut moved = false;
            for _ in 0..50 {
                let mut trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
                domain.clamp(&mut trial);
                let trial_value = mean_at(&trial);
                let decrease: f64 = x
                    .iter()
                    .zip(&trial)
                    .zip(&pg)
                    .map(|((a, b), g)| (a - b) * g)
                    .sum();
                if trial_value.is_finite() && trial_value <= value - 1e-4 * decrease.max(0.0) && trial != x
                {
                    x = trial;
                    value = trial_value;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                // no admissible decrease: accept as converged at this tolerance
                let pg = projected_gradient(&x, &grad_at(&x), domain, cfg.boundary_tol);
                converged = crate::diffcore::max_norm(&pg) <= cfg.grad_tol * 10.0;
                break;
            }
        }
        let replace = match &best {
            None => true,
            Some((_, best_value, _)) => value < *best_value,
        };
        if replace {
            best = Some((x, value, converged));
        }
    }
    let (x, _pgd_value, pgd_converged) = best.ok_or(GoalError::InnerOptFailed)?;

    // Newton polish on the free coordinates: the value-based line search
    // stalls near machine precision of m(x), well before tight gradient
    // tolerances are reachable
    let x_star = newton_polish(model, params, family, domain, x, cfg);
    let inner_value = mean_at(&x_star);
    let pg = projected_gradient(&x_star, &grad_at(&x_star), domain, cfg.boundary_tol);
    let converged = crate::diffcore::max_norm(&pg) <= cfg.grad_tol
        || (pgd_converged && crate::diffcore::max_norm(&pg) <= cfg.grad_tol * 10.0);
    Ok(RecommendedDesign {
        x_star,
        inner_value,
        converged,
        restarts_used: cfg.restarts.max(1),
    })
}

/// Damped Newton refinement of a near-stationary point, restricted to the
/// coordinates that are strictly inside the box. Falls back to the input on
/// any sign of trouble (non-PD curvature, box exit, gradient growth).
fn newton_polish(
    model: &dyn NaturalParamModel,
    params: &ParameterVector,
    family: Family,
    domain: &DomainBox,
    mut x: Vec<f64>,
    cfg: &InnerOptConfig,
) -> Vec<f64> {
    let boundary_tol = 1e-9 * domain
        .bounds
        .iter()
        .map(|(lo, hi)| hi - lo)
        .fold(1.0f64, f64::max);
    for _ in 0..12 {
        let active = domain.active_dims(&x, boundary_tol);
        let free: Vec<usize> = (0..domain.dim()).filter(|d| !active.contains(d)).collect();
        if free.is_empty() {
            return x;
        }
        let grad = mean_input_grad(model, params, family, &x);
        let grad_free: Vec<f64> = free.iter().map(|&i| grad[i]).collect();
        let grad_norm = crate::diffcore::max_norm(&grad_free);
        if grad_norm <= 1e-14 {
            return x;
        }
        // FD curvature of the mean restricted to the free coordinates
        let hx = 1e-5 * (1.0 + crate::diffcore::max_norm(&x));
        let mut k = nalgebra::DMatrix::zeros(free.len(), free.len());
        for (col, &j) in free.iter().enumerate() {
            let mut plus = x.clone();
            plus[j] += hx;
            let mut minus = x.clone();
            minus[j] -= hx;
            let gp = mean_input_grad(model, params, family, &plus);
            let gm = mean_input_grad(model, params, family, &minus);
            for (row, &i) in free.iter().enumerate() {
                k[(row, col)] = (gp[i] - gm[i]) / (2.0 * hx);
            }
        }
        let k = (k.clone() + k.transpose()) * 0.5;
        let Some(chol) = k.cholesky() else {
            return x; // not locally convex: keep the descent result
        };
        let rhs = nalgebra::DVector::from_iterator(free.len(), grad_free.iter().map(|g| -g));
        let step = chol.solve(&rhs);
        let mut trial = x.clone();
        for (row, &i) in free.iter().enumerate() {
            trial[i] += step[row];
        }
        domain.clamp(&mut trial);
        let trial_grad = mean_input_grad(model, params, family, &trial);
        let trial_pg = projected_gradient(&trial, &trial_grad, domain, cfg.boundary_tol);
        let trial_norm = crate::diffcore::max_norm(
            &free.iter().map(|&i| trial_pg[i]).collect::<Vec<f64>>(),
        );
        if !trial_norm.is_finite() || trial_norm >= grad_norm {
            return x;
        }
        x = trial;
    }
    x
}

/// ∇_x A′(η_θ(x)): how the predictive mean moves with the input.
fn mean_input_grad(
    model: &dyn NaturalParamModel,
    params: &ParameterVector,
    family: Family,
    x: &[f64],
) -> Vec<f64> {
    let eta = model.eta(params, x);
    let scale = family.variance(eta);
    let mut g = model.eta_input_grad(params, x);
    for gi in &mut g {
        *gi *= scale;
    }
    g
}

/// Jacobian ∂x̂*/∂θ of the recommended design via implicit differentiation of
/// the stationarity condition: −[∇²_x A′]⁻¹ [∂/∂θ ∇_x A′], a d_x × d_θ matrix.
/// Valid only for converged interior designs with a PD inner Hessian.
pub fn minimizer_jacobian(
    model: &dyn NaturalParamModel,
    params: &ParameterVector,
    family: Family,
    domain: &DomainBox,
    design: &RecommendedDesign,
) -> Result<DenseMatrix, GoalError> {
    if !design.converged {
        return Err(GoalError::DesignNotConverged);
    }
    let boundary_tol = 1e-7 * domain
        .bounds
        .iter()
        .map(|(lo, hi)| hi - lo)
        .fold(1.0f64, f64::max);
    if !domain.active_dims(&design.x_star, boundary_tol).is_empty() {
        return Err(GoalError::BoundaryDesign);
    }
    let free: Vec<usize> = (0..domain.dim()).collect();
    jacobian_on_dims(model, params, family, &design.x_star, &free)
}

/// The same Jacobian restricted to the given input dimensions; rows for the
/// other dimensions are zero. Used for the conservative boundary fallback.
fn jacobian_on_dims(
    model: &dyn NaturalParamModel,
    params: &ParameterVector,
    family: Family,
    x_star: &[f64],
    free: &[usize],
) -> Result<DenseMatrix, GoalError> {
    let d_x = x_star.len();
    let d_theta = params.len();
    let mut jacobian = DenseMatrix::zeros(d_x, d_theta);
    if free.is_empty() {
        return Ok(jacobian);
    }

    // K = ∇_x of the mean gradient, restricted to free dims
    let hx = 1e-5 * (1.0 + crate::diffcore::max_norm(x_star));
    let mut k = DenseMatrix::zeros(free.len(), free.len());
    for (col, &j) in free.iter().enumerate() {
        let mut plus = x_star.to_vec();
        plus[j] += hx;
        let mut minus = x_star.to_vec();
        minus[j] -= hx;
        let gp = mean_input_grad(model, params, family, &plus);
        let gm = mean_input_grad(model, params, family, &minus);
        for (row, &i) in free.iter().enumerate() {
            k.set(row, col, (gp[i] - gm[i]) / (2.0 * hx));
        }
    }
    k.symmetrize();

    // M = ∂/∂θ of the mean gradient, restricted rows
    let ht = 1e-5 * (1.0 + params.norm());
    let mut m = DenseMatrix::zeros(free.len(), d_theta);
    let mut shifted = params.clone();
    for j in 0..d_theta {
        let original = shifted.as_slice()[j];
        shifted.as_mut_slice()[j] = original + ht;
        let gp = mean_input_grad(model, &shifted, family, x_star);
        shifted.as_mut_slice()[j] = original - ht;
        let gm = mean_input_grad(model, &shifted, family, x_star);
        shifted.as_mut_slice()[j] = original;
        for (row, &i) in free.iter().enumerate() {
            m.set(row, j, (gp[i] - gm[i]) / (2.0 * ht));
        }
    }

    // J_free = -K⁻¹ M
    let kn = k.to_nalgebra();
    let chol = kn.cholesky().ok_or(GoalError::SingularInnerHessian)?;
    let mn = m.to_nalgebra();
    let solved = chol.solve(&mn);
    for (row, &i) in free.iter().enumerate() {
        for j in 0..d_theta {
            jacobian.set(i, j, -solved[(row, j)]);
        }
    }
    Ok(jacobian)
}

/// Diagnostics attached to a goal-gradient evaluation.
#[derive(Debug, Clone, Default)]
pub struct GoalGradientReport {
    pub design: Option<RecommendedDesign>,
    /// Set when the design sat on the boundary and the Jacobian fell back to
    /// treating the active dimensions as fixed.
    pub boundary_fallback: bool,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// Binary entropy of a Bernoulli mean.
fn binary_entropy(p: f64) -> f64 {
    let p = clamp_prob(p);
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

/// Focal-weighted cross entropy for one target with true-mean q and model
/// mean p, and its derivative in p.
fn focal_terms(q: f64, p: f64, gamma: f64) -> (f64, f64) {
    let p = clamp_prob(p);
    let one_minus = 1.0 - p;
    let value = -(q * one_minus.powf(gamma) * p.ln() + (1.0 - q) * p.powf(gamma) * one_minus.ln());
    let d_pos = if gamma == 0.0 {
        one_minus.powf(gamma) / p
    } else {
        -gamma * one_minus.powf(gamma - 1.0) * p.ln() + one_minus.powf(gamma) / p
    };
    let d_neg = if gamma == 0.0 {
        -p.powf(gamma) / one_minus
    } else {
        gamma * p.powf(gamma - 1.0) * one_minus.ln() - p.powf(gamma) / one_minus
    };
    let derivative = -(q * d_pos + (1.0 - q) * d_neg);
    (value, derivative)
}

/// Goal value at the current parameters. For the opt-value goal a design can
/// be supplied to avoid re-running the inner optimizer.
pub fn goal_value(
    goal: &GoalObjective,
    model: &dyn NaturalParamModel,
    params: &ParameterVector,
    family: Family,
    ensemble: &JackknifeEnsemble,
    design: Option<&RecommendedDesign>,
) -> Result<f64, GoalError> {
    match &goal.kind {
        GoalKind::OptValue { domain, inner } => {
            let owned;
            let design = match design {
                Some(d) => d,
                None => {
                    owned = recommend_minimizer(model, params, family, domain, inner)?;
                    &owned
                }
            };
            Ok(family.mean(ensemble.mean_eta(&design.x_star)))
        }
        GoalKind::Nll {
            targets,
            known_means,
        } => {
            let mut acc = 0.0;
            for (i, x) in targets.iter().enumerate() {
                let eta = model.eta(params, x);
                let target_mean = match known_means {
                    Some(means) => means[i],
                    None => ensemble.surrogate_mean(x),
                };
                acc += family.log_partition(eta) - eta * target_mean;
            }
            Ok(acc)
        }
        GoalKind::Focal { targets, gamma } => {
            if family != Family::Bernoulli {
                return Err(GoalError::FocalUnsupported);
            }
            let mut acc = 0.0;
            for x in targets {
                let p = family.mean(model.eta(params, x));
                let q = ensemble.surrogate_mean(x).clamp(0.0, 1.0);
                acc += focal_terms(q, p, *gamma).0;
            }
            Ok(acc)
        }
        GoalKind::Entropy { targets } => match family {
            Family::Bernoulli => Ok(targets
                .iter()
                .map(|x| binary_entropy(family.mean(model.eta(params, x))))
                .sum()),
            // unit-variance Gaussian: differential entropy is constant in θ
            Family::GaussianUnit => {
                let per_point = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
                Ok(per_point * targets.len() as f64)
            }
        },
    }
}

/// ∇_θ G at the current parameters, with diagnostics.
pub fn goal_gradient(
    goal: &GoalObjective,
    model: &dyn NaturalParamModel,
    params: &ParameterVector,
    family: Family,
    ensemble: &JackknifeEnsemble,
    design: Option<&RecommendedDesign>,
) -> Result<(ParameterVector, GoalGradientReport), GoalError> {
    let mut report = GoalGradientReport::default();
    match &goal.kind {
        GoalKind::OptValue { domain, inner } => {
            let owned;
            let design = match design {
                Some(d) => d.clone(),
                None => {
                    owned = recommend_minimizer(model, params, family, domain, inner)?;
                    owned
                }
            };
            if !design.converged {
                return Err(GoalError::DesignNotConverged);
            }
            let boundary_tol = 1e-7 * domain
                .bounds
                .iter()
                .map(|(lo, hi)| hi - lo)
                .fold(1.0f64, f64::max);
            let active = domain.active_dims(&design.x_star, boundary_tol);
            let jacobian = if active.is_empty() {
                jacobian_on_dims(
                    model,
                    params,
                    family,
                    &design.x_star,
                    &(0..domain.dim()).collect::<Vec<_>>(),
                )?
            } else {
                report.boundary_fallback = true;
                let free: Vec<usize> =
                    (0..domain.dim()).filter(|d| !active.contains(d)).collect();
                jacobian_on_dims(model, params, family, &design.x_star, &free)?
            };
            // chain rule through the surrogate's natural-parameter function
            let eta_bar = ensemble.mean_eta(&design.x_star);
            let weight = family.variance(eta_bar);
            let surrogate_grad = ensemble.mean_eta_input_grad(&design.x_star);
            let mut grad = vec![0.0; params.len()];
            for (i, g_i) in surrogate_grad.iter().enumerate() {
                let row_weight = weight * g_i;
                for (j, slot) in grad.iter_mut().enumerate() {
                    *slot += row_weight * jacobian.get(i, j);
                }
            }
            report.design = Some(design);
            Ok((params.with_values(grad), report))
        }
        GoalKind::Nll {
            targets,
            known_means,
        } => {
            let mut grad = params.zeros_like();
            for (i, x) in targets.iter().enumerate() {
                let eta = model.eta(params, x);
                let target_mean = match known_means {
                    Some(means) => means[i],
                    None => ensemble.surrogate_mean(x),
                };
                let bias = family.mean(eta) - target_mean;
                grad = grad.axpy(bias, &model.eta_grad(params, x));
            }
            Ok((grad, report))
        }
        GoalKind::Focal { targets, gamma } => {
            if family != Family::Bernoulli {
                return Err(GoalError::FocalUnsupported);
            }
            let mut grad = params.zeros_like();
            for x in targets {
                let eta = model.eta(params, x);
                let p = family.mean(eta);
                let q = ensemble.surrogate_mean(x).clamp(0.0, 1.0);
                let chain = focal_terms(q, p, *gamma).1 * family.variance(eta);
                grad = grad.axpy(chain, &model.eta_grad(params, x));
            }
            Ok((grad, report))
        }
        GoalKind::Entropy { targets } => {
            let mut grad = params.zeros_like();
            if family == Family::Bernoulli {
                for x in targets {
                    let eta = model.eta(params, x);
                    // dH/dη = (log((1-p)/p)) A″ = −η A″ for the canonical link
                    let chain = -eta * family.variance(eta);
                    grad = grad.axpy(chain, &model.eta_grad(params, x));
                }
            }
            Ok((grad, report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Example;
    use crate::expfam::{IdentityFeatures, LinearModel, QuadraticFeatures1d};
    use crate::model::GlmTemplate;
    use crate::surrogate::train_ensemble;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn tiny_ensemble(dim: usize, family: Family) -> JackknifeEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data: Vec<Example> = (0..12)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let y = match family {
                    Family::Bernoulli => f64::from(rng.gen::<f64>() < 0.5),
                    Family::GaussianUnit => rng.sample::<f64, _>(StandardNormal),
                };
                Example::new(x, y)
            })
            .collect();
        let template = GlmTemplate::new(family, Arc::new(IdentityFeatures { dim }), 0.05);
        train_ensemble(&data, 3, &template, &mut rng).unwrap()
    }

    #[test]
    fn quadratic_bowl_recommendation() {
        // fit (x-3)^2 = 9 - 6x + x^2 exactly with quadratic features
        let features = Arc::new(QuadraticFeatures1d);
        let model = LinearModel::new(features);
        let params = ParameterVector::flat(vec![9.0, -6.0, 1.0]);
        let domain = DomainBox::new(vec![(0.0, 10.0)]).unwrap();
        let design = recommend_minimizer(
            &model,
            &params,
            Family::GaussianUnit,
            &domain,
            &InnerOptConfig::default(),
        )
        .unwrap();
        assert!(design.converged);
        assert!((design.x_star[0] - 3.0).abs() < 1e-4, "x* {}", design.x_star[0]);
    }

    #[test]
    fn constant_mean_converges_anywhere() {
        let model = LinearModel::new(Arc::new(QuadraticFeatures1d));
        let params = ParameterVector::flat(vec![5.0, 0.0, 0.0]);
        let domain = DomainBox::new(vec![(0.0, 1.0)]).unwrap();
        let design = recommend_minimizer(
            &model,
            &params,
            Family::GaussianUnit,
            &domain,
            &InnerOptConfig::default(),
        )
        .unwrap();
        assert!(design.converged);
        assert!((design.inner_value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn corner_minimum_converges_by_projection() {
        // mean = x on [0,1]: minimum at the lower corner
        let model = LinearModel::raw(1);
        let params = ParameterVector::flat(vec![1.0]);
        let domain = DomainBox::new(vec![(0.0, 1.0)]).unwrap();
        let design = recommend_minimizer(
            &model,
            &params,
            Family::GaussianUnit,
            &domain,
            &InnerOptConfig::default(),
        )
        .unwrap();
        assert!(design.converged);
        assert!(design.x_star[0] < 1e-9);
    }

    #[test]
    fn jacobian_for_translated_bowl_is_unit_row() {
        // mean = (x - θ1)² + θ2 modeled directly: x* = θ1 exactly
        struct ShiftedBowl;
        impl NaturalParamModel for ShiftedBowl {
            fn param_dim(&self) -> usize {
                2
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn layout(&self) -> Arc<crate::diffcore::ParamLayout> {
                Arc::new(crate::diffcore::ParamLayout::flat(2))
            }
            fn eta(&self, params: &ParameterVector, x: &[f64]) -> f64 {
                let t = params.as_slice();
                (x[0] - t[0]) * (x[0] - t[0]) + t[1]
            }
            fn eta_grad(&self, params: &ParameterVector, x: &[f64]) -> ParameterVector {
                let t = params.as_slice();
                params.with_values(vec![-2.0 * (x[0] - t[0]), 1.0])
            }
            fn eta_input_grad(&self, params: &ParameterVector, x: &[f64]) -> Vec<f64> {
                let t = params.as_slice();
                vec![2.0 * (x[0] - t[0])]
            }
        }
        let model = ShiftedBowl;
        let params = ParameterVector::flat(vec![0.4, 1.0]);
        let domain = DomainBox::new(vec![(-2.0, 2.0)]).unwrap();
        let design = recommend_minimizer(
            &model,
            &params,
            Family::GaussianUnit,
            &domain,
            &InnerOptConfig::default(),
        )
        .unwrap();
        assert!((design.x_star[0] - 0.4).abs() < 1e-6);
        let jac = minimizer_jacobian(&model, &params, Family::GaussianUnit, &domain, &design)
            .unwrap();
        assert!((jac.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(jac.get(0, 1).abs() < 1e-6);
    }

    #[test]
    fn jacobian_rejects_boundary_designs() {
        let model = LinearModel::raw(1);
        let params = ParameterVector::flat(vec![1.0]);
        let domain = DomainBox::new(vec![(0.0, 1.0)]).unwrap();
        let design = recommend_minimizer(
            &model,
            &params,
            Family::GaussianUnit,
            &domain,
            &InnerOptConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            minimizer_jacobian(&model, &params, Family::GaussianUnit, &domain, &design),
            Err(GoalError::BoundaryDesign)
        ));
    }

    #[test]
    fn entropy_gradient_vanishes_at_maximum_entropy() {
        let dim = 2;
        let ens = tiny_ensemble(dim, Family::Bernoulli);
        let model = LinearModel::raw(dim);
        let params = ParameterVector::flat(vec![0.0, 0.0]); // every η = 0
        let goal = GoalObjective::new(GoalKind::Entropy {
            targets: vec![vec![1.0, 0.0], vec![0.3, -0.7]],
        })
        .unwrap();
        let (grad, _) =
            goal_gradient(&goal, &model, &params, Family::Bernoulli, &ens, None).unwrap();
        assert!(grad.max_norm() < 1e-14);
    }

    #[test]
    fn focal_gamma_zero_equals_nll() {
        let dim = 3;
        let ens = tiny_ensemble(dim, Family::Bernoulli);
        let model = LinearModel::raw(dim);
        let params = ParameterVector::flat(vec![0.3, -0.4, 0.2]);
        let targets = vec![vec![1.0, 0.2, -0.5], vec![-0.3, 0.8, 0.1], vec![0.0, 1.0, 1.0]];
        let nll_goal = GoalObjective::new(GoalKind::Nll {
            targets: targets.clone(),
            known_means: None,
        })
        .unwrap();
        let focal_goal = GoalObjective::new(GoalKind::Focal {
            targets,
            gamma: 0.0,
        })
        .unwrap();
        let (g_nll, _) =
            goal_gradient(&nll_goal, &model, &params, Family::Bernoulli, &ens, None).unwrap();
        let (g_focal, _) =
            goal_gradient(&focal_goal, &model, &params, Family::Bernoulli, &ens, None).unwrap();
        for (a, b) in g_nll.as_slice().iter().zip(g_focal.as_slice()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn nll_with_model_as_surrogate_reproduces_entropy_value() {
        // replace the surrogate means by the model's own means: the NLL value
        // becomes the entropy value for Bernoulli
        let dim = 2;
        let model = LinearModel::raw(dim);
        let params = ParameterVector::flat(vec![0.7, -0.3]);
        let targets = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![-1.0, 2.0]];

        let mut ens = tiny_ensemble(dim, Family::Bernoulli);
        for member in &mut ens.members {
            member.params = params.clone();
        }
        let nll_goal = GoalObjective::new(GoalKind::Nll {
            targets: targets.clone(),
            known_means: None,
        })
        .unwrap();
        let ent_goal = GoalObjective::new(GoalKind::Entropy { targets }).unwrap();
        let nll_value =
            goal_value(&nll_goal, &model, &params, Family::Bernoulli, &ens, None).unwrap();
        let ent_value =
            goal_value(&ent_goal, &model, &params, Family::Bernoulli, &ens, None).unwrap();
        assert!((nll_value - ent_value).abs() < 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences_of_values() {
        let dim = 3;
        let model = LinearModel::raw(dim);
        let params = ParameterVector::flat(vec![0.2, -0.6, 0.4]);
        let targets = vec![vec![1.0, 0.0, 0.3], vec![-0.2, 0.9, -0.5], vec![0.4, 0.4, 1.0]];
        let ens = tiny_ensemble(dim, Family::Bernoulli);

        let goals = vec![
            GoalObjective::new(GoalKind::Nll {
                targets: targets.clone(),
                known_means: None,
            })
            .unwrap(),
            GoalObjective::new(GoalKind::Focal {
                targets: targets.clone(),
                gamma: 2.0,
            })
            .unwrap(),
            GoalObjective::new(GoalKind::Entropy { targets }).unwrap(),
        ];
        for goal in &goals {
            let (grad, _) =
                goal_gradient(goal, &model, &params, Family::Bernoulli, &ens, None).unwrap();
            let h = 1e-5;
            for j in 0..dim {
                let mut plus = params.clone();
                plus.as_mut_slice()[j] += h;
                let mut minus = params.clone();
                minus.as_mut_slice()[j] -= h;
                let vp =
                    goal_value(goal, &model, &plus, Family::Bernoulli, &ens, None).unwrap();
                let vm =
                    goal_value(goal, &model, &minus, Family::Bernoulli, &ens, None).unwrap();
                let fd = (vp - vm) / (2.0 * h);
                let tol = 1e-4 * (1.0 + grad.norm());
                assert!(
                    (fd - grad.as_slice()[j]).abs() < tol,
                    "component {j}: fd={fd} analytic={}",
                    grad.as_slice()[j]
                );
            }
        }
    }

    #[test]
    fn opt_value_gradient_matches_finite_differences() {
        // smooth Gaussian instance over quadratic features
        let features = Arc::new(QuadraticFeatures1d);
        let model = LinearModel::new(features.clone());
        let params = ParameterVector::flat(vec![9.0, -6.0, 1.0]);
        let domain = DomainBox::new(vec![(0.0, 10.0)]).unwrap();
        let inner = InnerOptConfig {
            grad_tol: 1e-11,
            max_iters: 4_000,
            ..Default::default()
        };

        // surrogate members near each other so the mean-η function is smooth
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Example> = (0..12)
            .map(|_| {
                let x = rng.gen::<f64>() * 10.0;
                let y = (x - 2.5) * (x - 2.5) + 0.05 * rng.sample::<f64, _>(StandardNormal);
                Example::new(vec![x], y)
            })
            .collect();
        let template = GlmTemplate::new(Family::GaussianUnit, features, 1e-8);
        let ens = train_ensemble(&data, 3, &template, &mut rng).unwrap();

        let goal = GoalObjective::new(GoalKind::OptValue {
            domain: domain.clone(),
            inner: inner.clone(),
        })
        .unwrap();
        let (grad, report) =
            goal_gradient(&goal, &model, &params, Family::GaussianUnit, &ens, None).unwrap();
        assert!(!report.boundary_fallback);

        let h = 1e-5;
        for j in 0..3 {
            let mut plus = params.clone();
            plus.as_mut_slice()[j] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[j] -= h;
            let vp = goal_value(&goal, &model, &plus, Family::GaussianUnit, &ens, None).unwrap();
            let vm = goal_value(&goal, &model, &minus, Family::GaussianUnit, &ens, None).unwrap();
            let fd = (vp - vm) / (2.0 * h);
            let tol = 1e-4 * (1.0 + grad.norm());
            assert!(
                (fd - grad.as_slice()[j]).abs() < tol,
                "component {j}: fd={fd} analytic={}",
                grad.as_slice()[j]
            );
        }
    }

    #[test]
    fn validation_rejects_bad_goals() {
        assert!(matches!(
            GoalObjective::new(GoalKind::Nll { targets: vec![], known_means: None }),
            Err(GoalError::EmptyTargetSet)
        ));
        assert!(matches!(
            GoalObjective::new(GoalKind::Focal {
                targets: vec![vec![0.0]],
                gamma: -1.0
            }),
            Err(GoalError::InvalidGamma(_))
        ));
        assert!(matches!(
            DomainBox::new(vec![(1.0, 1.0)]),
            Err(GoalError::InvalidBox(0))
        ));
    }
}
