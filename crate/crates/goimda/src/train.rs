//! Full-batch Adam training for non-convex losses (the MLP path).
//!
//! Desk-scale datasets fit in a single batch, which keeps training
//! deterministic given the initialization. Early stopping watches a held-out
//! validation slice and restores the best parameters on plateau.

use crate::diffcore::{batch_gradient, Example, LossFunction, ParameterVector};
use crate::glm::FitReport;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// L2 penalty added to the gradient (decoupled from the loss value).
    pub weight_decay: f64,
    /// Fraction of the data held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Gradient max-norm below which training stops early.
    pub grad_tol: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 400,
            weight_decay: 1e-4,
            validation_fraction: 0.2,
            patience: 40,
            grad_tol: 1e-7,
        }
    }
}

fn mean_loss(loss: &dyn LossFunction, params: &ParameterVector, data: &[Example]) -> f64 {
    data.iter()
        .map(|example| loss.evaluate(params, example))
        .sum::<f64>()
        / data.len() as f64
}

/// Runs Adam from `init` and returns the parameters with the best validation
/// loss seen (training loss when no validation slice is configured).
pub fn fit_adam(
    loss: &dyn LossFunction,
    data: &[Example],
    init: &ParameterVector,
    cfg: &AdamConfig,
) -> (ParameterVector, FitReport) {
    assert!(!data.is_empty(), "empty training set");
    let n_val = if data.len() >= 10 {
        ((data.len() as f64 * cfg.validation_fraction) as usize).min(data.len() / 2)
    } else {
        0
    };
    // the caller shuffles; the validation slice is the tail
    let (train, val) = data.split_at(data.len() - n_val);
    let train = if train.is_empty() { data } else { train };

    let dim = init.len();
    let mut params = init.clone();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut best = params.clone();
    let mut best_score = f64::INFINITY;
    let mut stale = 0usize;
    let mut report = FitReport {
        converged: false,
        iterations: 0,
        grad_max_norm: f64::INFINITY,
    };

    for epoch in 0..cfg.epochs {
        let grad = match batch_gradient(loss, &params, train) {
            Ok(g) => g,
            Err(_) => break,
        };
        let mut grad = grad.into_values();
        if cfg.weight_decay > 0.0 {
            for (g, p) in grad.iter_mut().zip(params.as_slice()) {
                *g += cfg.weight_decay * p;
            }
        }
        let grad_max = crate::diffcore::max_norm(&grad);
        report.iterations = epoch + 1;
        report.grad_max_norm = grad_max;
        if grad_max <= cfg.grad_tol {
            report.converged = true;
            break;
        }

        let t = (epoch + 1) as f64;
        let correction1 = 1.0 - cfg.beta1.powf(t);
        let correction2 = 1.0 - cfg.beta2.powf(t);
        let values = params.as_mut_slice();
        for i in 0..dim {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }

        let score = if val.is_empty() {
            mean_loss(loss, &params, train)
        } else {
            mean_loss(loss, &params, val)
        };
        if score.is_finite() && score < best_score - 1e-12 {
            best_score = score;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                report.converged = true; // plateau counts as converged for refits
                break;
            }
        }
    }
    if best_score.is_finite() {
        (best, report)
    } else {
        (params, report)
    }
}
