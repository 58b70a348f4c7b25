//! Canonical-link generalized linear models: Newton fitting, Hessians, and
//! the closed-form acquisition scores available for GLMs.
//!
//! The natural parameter is linear in the parameters, η_θ(x) = xᵀθ (callers
//! expand features beforehand when a basis is wanted). Fits minimize the mean
//! family NLL plus a ridge term (ridge/2)·|θ|²; the Hessian of that objective
//! is (1/n) Σ A″(x_iᵀθ) x_i x_iᵀ + ridge·I, symmetric PSD.

use thiserror::Error;

use crate::diffcore::{dot, DenseMatrix, Example, ParameterVector};
use crate::expfam::Family;
use crate::ihvp::{ApplyInverse, IhvpError};

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("empty dataset")]
    EmptyData,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature or label at example {index}")]
    NonFiniteData { index: usize },
    #[error("matrix not positive definite")]
    NotPositiveDefinite,
    #[error("solver failure: {0}")]
    Solver(#[from] IhvpError),
}

/// Outcome of an iterative fit. Non-convergence is reported, never silently
/// dropped: callers decide whether a warning-level result is acceptable.
#[derive(Debug, Clone, Copy)]
pub struct FitReport {
    pub converged: bool,
    pub iterations: usize,
    pub grad_max_norm: f64,
}

/// Newton iteration controls.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100,
        }
    }
}

/// A fitted canonical-link GLM.
#[derive(Debug, Clone)]
pub struct GlmModel {
    pub family: Family,
    pub theta: ParameterVector,
    pub ridge: f64,
}

impl GlmModel {
    pub fn eta(&self, x: &[f64]) -> f64 {
        dot(x, self.theta.as_slice())
    }

    pub fn predictive_mean(&self, x: &[f64]) -> f64 {
        self.family.mean(self.eta(x))
    }
}

fn penalized_objective(family: Family, theta: &[f64], data: &[Example], ridge: f64) -> f64 {
    let n = data.len() as f64;
    let mut acc = 0.0;
    for example in data {
        let eta = dot(&example.x, theta);
        acc += family.log_partition(eta) - eta * family.sufficient_stat(example.y);
    }
    acc / n + 0.5 * ridge * dot(theta, theta)
}

fn penalized_gradient(family: Family, theta: &[f64], data: &[Example], ridge: f64) -> Vec<f64> {
    let n = data.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    for example in data {
        let eta = dot(&example.x, theta);
        let residual = family.mean(eta) - family.sufficient_stat(example.y);
        for (g, xi) in grad.iter_mut().zip(&example.x) {
            *g += residual * xi;
        }
    }
    for (g, t) in grad.iter_mut().zip(theta) {
        *g = *g / n + ridge * t;
    }
    grad
}

/// Fits by damped Newton until the gradient max-norm drops below the
/// tolerance or the iteration budget runs out (reported, not an error).
pub fn fit_glm(
    data: &[Example],
    family: Family,
    ridge: f64,
    init: &ParameterVector,
) -> Result<(GlmModel, FitReport), GlmError> {
    fit_glm_with(data, family, ridge, init, NewtonOptions::default())
}

pub fn fit_glm_with(
    data: &[Example],
    family: Family,
    ridge: f64,
    init: &ParameterVector,
    options: NewtonOptions,
) -> Result<(GlmModel, FitReport), GlmError> {
    if data.is_empty() {
        return Err(GlmError::EmptyData);
    }
    let dim = init.len();
    for (index, example) in data.iter().enumerate() {
        if example.x.len() != dim {
            return Err(GlmError::DimensionMismatch {
                expected: dim,
                got: example.x.len(),
            });
        }
        if !example.y.is_finite() || example.x.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFiniteData { index });
        }
    }

    let n = data.len() as f64;
    let mut theta = init.as_slice().to_vec();
    let mut report = FitReport {
        converged: false,
        iterations: 0,
        grad_max_norm: f64::INFINITY,
    };
    for iteration in 0..options.max_iters {
        let grad = penalized_gradient(family, &theta, data, ridge);
        let grad_max = crate::diffcore::max_norm(&grad);
        report.iterations = iteration;
        report.grad_max_norm = grad_max;
        if grad_max <= options.tol {
            report.converged = true;
            break;
        }

        let mut hessian = nalgebra::DMatrix::zeros(dim, dim);
        for example in data {
            let weight = family.variance(dot(&example.x, &theta)) / n;
            for i in 0..dim {
                let wi = weight * example.x[i];
                for j in 0..dim {
                    hessian[(i, j)] += wi * example.x[j];
                }
            }
        }
        for i in 0..dim {
            hessian[(i, i)] += ridge;
        }

        // jitter escalation keeps separable fits moving instead of crashing
        let rhs = nalgebra::DVector::from_iterator(dim, grad.iter().map(|g| -g));
        let mut step = None;
        let mut jitter = 0.0;
        for _ in 0..8 {
            let mut damped = hessian.clone();
            if jitter > 0.0 {
                for i in 0..dim {
                    damped[(i, i)] += jitter;
                }
            }
            if let Some(chol) = damped.cholesky() {
                step = Some(chol.solve(&rhs));
                break;
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
        }
        let Some(step) = step else {
            break; // report stays non-converged with the last gradient norm
        };

        // backtracking on the penalized objective
        let base = penalized_objective(family, &theta, data, ridge);
        let mut factor = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t + factor * s)
                .collect();
            let value = penalized_objective(family, &candidate, data, ridge);
            if value.is_finite() && value <= base + 1e-12 {
                theta = candidate;
                accepted = true;
                break;
            }
            factor *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !report.converged {
        let grad = penalized_gradient(family, &theta, data, ridge);
        report.grad_max_norm = crate::diffcore::max_norm(&grad);
        report.converged = report.grad_max_norm <= options.tol;
        if report.converged {
            report.iterations = options.max_iters;
        }
    }
    // separated Bernoulli data without a ridge has no finite minimizer: the
    // gradient only vanished because every fitted probability saturated
    if report.converged && ridge == 0.0 && family == Family::Bernoulli {
        let saturated = data.iter().all(|example| {
            let eta = dot(&example.x, &theta);
            (family.mean(eta) - example.y).abs() <= 1e-6
        });
        if saturated {
            report.converged = false;
        }
    }
    let theta = init.with_values(theta);
    Ok((
        GlmModel {
            family,
            theta,
            ridge,
        },
        report,
    ))
}

/// (1/n) Σ A″(x_iᵀθ) x_i x_iᵀ + ridge·I.
pub fn glm_hessian(model: &GlmModel, data: &[Example]) -> DenseMatrix {
    let dim = model.theta.len();
    let n = data.len() as f64;
    let mut h = DenseMatrix::zeros(dim, dim);
    for example in data {
        let weight = model.family.variance(model.eta(&example.x)) / n;
        h.add_outer(weight, &example.x);
    }
    h.add_diagonal(model.ridge);
    h
}

/// Predictive-entropy leverage score: −x_cᵀ H⁻¹ x_c · A″(η_θ(x_c)). Always ≤ 0
/// for PSD H.
pub fn pe_score(
    model: &GlmModel,
    h_inverse: &dyn ApplyInverse,
    candidate: &[f64],
) -> Result<f64, GlmError> {
    let w = h_inverse.apply_inverse(candidate)?;
    let leverage = dot(candidate, &w);
    Ok(-leverage * model.family.variance(model.eta(candidate)))
}

/// Goal-oriented influence score in the parameter-bias form:
/// [∇G]ᵀH⁻¹x_c · x_cᵀ(θ−θ₀) · A″(η_θ(x_c)).
/// Larger values mean a label at x_c is expected to decrease the goal more.
pub fn goi_score_glm(
    model: &GlmModel,
    h_inverse: &dyn ApplyInverse,
    goal_grad: &[f64],
    bias: &[f64],
    candidate: &[f64],
) -> Result<f64, GlmError> {
    let w = h_inverse.apply_inverse(candidate)?;
    let alignment = dot(goal_grad, &w);
    let directional_bias = dot(candidate, bias);
    Ok(alignment * directional_bias * model.family.variance(model.eta(candidate)))
}

fn log_det_pd(m: &nalgebra::DMatrix<f64>) -> Result<f64, GlmError> {
    let chol = m.clone().cholesky().ok_or(GlmError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    Ok(2.0 * acc)
}

/// Both sides of the rank-one log-determinant identity
///   log|H_c⁻¹| = log|H⁻¹| − log(1 + x_cᵀH⁻¹x_c · a2),  H_c = H + a2·x_c x_cᵀ.
///
/// The lhs is computed from a fresh factorization of H_c, the rhs from the
/// update formula; both are returned for comparison. When the appended point
/// carries a 1/n weight in the empirical Hessian, pass a2 scaled by 1/n.
pub fn logdet_update_check(
    h: &DenseMatrix,
    candidate: &[f64],
    a2: f64,
) -> Result<(f64, f64), GlmError> {
    let hn = h.to_nalgebra();
    let log_det_h = log_det_pd(&hn)?;

    let mut updated = h.clone();
    updated.add_outer(a2, candidate);
    let lhs = -log_det_pd(&updated.to_nalgebra())?;

    let chol = hn.cholesky().ok_or(GlmError::NotPositiveDefinite)?;
    let w = chol.solve(&nalgebra::DVector::from_column_slice(candidate));
    let leverage = dot(candidate, w.as_slice());
    let rhs = -log_det_h - (1.0 + leverage * a2).ln();
    Ok((lhs, rhs))
}
