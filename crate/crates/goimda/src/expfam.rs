//! Exponential-family machinery: log-partition derivatives, NLL losses,
//! expected-loss gradients, and the natural-parameter model abstraction.
//!
//! Densities have the form h(y) exp(η T(y) − A(η)) with a scalar natural
//! parameter η produced by a model η_θ(x). Two families ship: Bernoulli
//! (logistic) and unit-variance Gaussian with identity link. Stored losses
//! drop the −log h(y) term since it never depends on θ for these families;
//! loss values are therefore comparable only within a family.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffcore::{DenseMatrix, Example, LossFunction, ParamLayout, ParameterVector};

#[derive(Debug, Error)]
pub enum ExpFamError {
    #[error("natural parameter out of domain: {eta}")]
    EtaOutOfDomain { eta: f64 },
}

/// Numerically stable log(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A scalar exponential family: the log-partition and its first two
/// derivatives, the sufficient statistic, and label sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// T(y) = y ∈ {0, 1}, A(η) = log(1 + e^η).
    Bernoulli,
    /// Unit-variance Gaussian with identity link: T(y) = y, A(η) = η²/2.
    GaussianUnit,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Bernoulli => "bernoulli",
            Family::GaussianUnit => "gaussian_unit",
        }
    }

    /// Log-partition A(η).
    pub fn log_partition(self, eta: f64) -> f64 {
        match self {
            Family::Bernoulli => softplus(eta),
            Family::GaussianUnit => 0.5 * eta * eta,
        }
    }

    /// A′(η): the predictive mean of T(y).
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Bernoulli => sigmoid(eta),
            Family::GaussianUnit => eta,
        }
    }

    /// A″(η): the predictive variance of T(y).
    pub fn variance(self, eta: f64) -> f64 {
        match self {
            Family::Bernoulli => {
                let p = sigmoid(eta);
                p * (1.0 - p)
            }
            Family::GaussianUnit => 1.0,
        }
    }

    pub fn sufficient_stat(self, y: f64) -> f64 {
        y
    }

    pub fn sample<R: Rng + ?Sized>(self, eta: f64, rng: &mut R) -> f64 {
        match self {
            Family::Bernoulli => {
                if rng.gen::<f64>() < sigmoid(eta) {
                    1.0
                } else {
                    0.0
                }
            }
            Family::GaussianUnit => eta + rng.sample::<f64, _>(StandardNormal),
        }
    }
}

/// Negative log-likelihood −η T(y) + A(η), with −log h(y) dropped.
pub fn nll(family: Family, eta: f64, y: f64) -> Result<f64, ExpFamError> {
    if !eta.is_finite() {
        return Err(ExpFamError::EtaOutOfDomain { eta });
    }
    Ok(family.log_partition(eta) - eta * family.sufficient_stat(y))
}

/// Predictive mean A′(η).
pub fn predictive_mean(family: Family, eta: f64) -> f64 {
    family.mean(eta)
}

/// A differentiable map x → feature vector, used by linear-in-parameters
/// models. The Jacobian has one row per output feature.
pub trait FeatureMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> DenseMatrix;
}

/// φ(x) = x.
#[derive(Debug, Clone)]
pub struct IdentityFeatures {
    pub dim: usize,
}

impl FeatureMap for IdentityFeatures {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn jacobian(&self, _x: &[f64]) -> DenseMatrix {
        DenseMatrix::identity(self.dim)
    }
}

/// Gaussian radial basis features around fixed centers, optionally preceded
/// by a constant and the raw coordinates.
#[derive(Debug, Clone)]
pub struct RbfFeatures {
    pub centers: Vec<Vec<f64>>,
    pub lengthscale: f64,
    pub include_affine: bool,
    input_dim: usize,
}

impl RbfFeatures {
    pub fn new(centers: Vec<Vec<f64>>, lengthscale: f64, include_affine: bool) -> Self {
        assert!(!centers.is_empty(), "need at least one center");
        assert!(lengthscale > 0.0, "lengthscale must be positive");
        let input_dim = centers[0].len();
        Self {
            centers,
            lengthscale,
            include_affine,
            input_dim,
        }
    }
}

impl FeatureMap for RbfFeatures {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.centers.len() + if self.include_affine { 1 + self.input_dim } else { 0 }
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim());
        if self.include_affine {
            out.push(1.0);
            out.extend_from_slice(x);
        }
        let inv2s2 = 1.0 / (2.0 * self.lengthscale * self.lengthscale);
        for center in &self.centers {
            let d2: f64 = x
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out.push((-d2 * inv2s2).exp());
        }
        out
    }

    fn jacobian(&self, x: &[f64]) -> DenseMatrix {
        let mut jac = DenseMatrix::zeros(self.output_dim(), self.input_dim);
        let mut row = 0;
        if self.include_affine {
            row += 1; // constant
            for j in 0..self.input_dim {
                jac.set(row, j, 1.0);
                row += 1;
            }
        }
        let s2 = self.lengthscale * self.lengthscale;
        for center in &self.centers {
            let d2: f64 = x
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let value = (-d2 / (2.0 * s2)).exp();
            for j in 0..self.input_dim {
                jac.set(row, j, -value * (x[j] - center[j]) / s2);
            }
            row += 1;
        }
        jac
    }
}

/// φ(x) = (1, x, x²) for scalar x. Test fixture for closed-form minimizers.
#[derive(Debug, Clone)]
pub struct QuadraticFeatures1d;

impl FeatureMap for QuadraticFeatures1d {
    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![1.0, x[0], x[0] * x[0]]
    }

    fn jacobian(&self, x: &[f64]) -> DenseMatrix {
        let mut jac = DenseMatrix::zeros(3, 1);
        jac.set(1, 0, 1.0);
        jac.set(2, 0, 2.0 * x[0]);
        jac
    }
}

/// A model of the natural parameter η_θ(x) with gradient access in both
/// arguments.
///
/// `eta_dir_grad` is the directional derivative of the parameter gradient in
/// a parameter direction v (the second-order product of η itself); the default
/// is a central difference and exact implementations override it.
pub trait NaturalParamModel: Send + Sync {
    fn param_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn layout(&self) -> Arc<ParamLayout>;

    fn eta(&self, params: &ParameterVector, x: &[f64]) -> f64;

    /// ∇_θ η_θ(x)
    fn eta_grad(&self, params: &ParameterVector, x: &[f64]) -> ParameterVector;

    /// ∇_x η_θ(x)
    fn eta_input_grad(&self, params: &ParameterVector, x: &[f64]) -> Vec<f64>;

    /// d/dε ∇_θ η_{θ+εv}(x) at ε = 0.
    fn eta_dir_grad(
        &self,
        params: &ParameterVector,
        x: &[f64],
        direction: &ParameterVector,
    ) -> ParameterVector {
        let v_norm = direction.norm();
        if v_norm == 0.0 {
            return params.zeros_like();
        }
        let h = 1e-4 * (1.0 + params.norm()) / (1.0 + v_norm);
        let plus = self.eta_grad(&params.axpy(h, direction), x);
        let minus = self.eta_grad(&params.axpy(-h, direction), x);
        plus.sub(&minus).scale(1.0 / (2.0 * h))
    }
}

/// η_θ(x) = φ(x)ᵀθ. Covers raw canonical GLMs (identity features) and
/// basis-expansion models alike; exactly linear in θ.
#[derive(Clone)]
pub struct LinearModel {
    features: Arc<dyn FeatureMap>,
    layout: Arc<ParamLayout>,
}

impl LinearModel {
    pub fn new(features: Arc<dyn FeatureMap>) -> Self {
        let layout = Arc::new(ParamLayout::flat(features.output_dim()));
        Self { features, layout }
    }

    pub fn raw(dim: usize) -> Self {
        Self::new(Arc::new(IdentityFeatures { dim }))
    }

    pub fn features(&self) -> &Arc<dyn FeatureMap> {
        &self.features
    }
}

impl NaturalParamModel for LinearModel {
    fn param_dim(&self) -> usize {
        self.features.output_dim()
    }

    fn input_dim(&self) -> usize {
        self.features.input_dim()
    }

    fn layout(&self) -> Arc<ParamLayout> {
        Arc::clone(&self.layout)
    }

    fn eta(&self, params: &ParameterVector, x: &[f64]) -> f64 {
        crate::diffcore::dot(&self.features.eval(x), params.as_slice())
    }

    fn eta_grad(&self, params: &ParameterVector, x: &[f64]) -> ParameterVector {
        params.with_values(self.features.eval(x))
    }

    fn eta_input_grad(&self, params: &ParameterVector, x: &[f64]) -> Vec<f64> {
        // Jᵀ θ with J the feature Jacobian
        let jac = self.features.jacobian(x);
        let mut out = vec![0.0; self.input_dim()];
        for (row, theta_row) in params.as_slice().iter().enumerate().take(jac.rows()) {
            for (j, out_j) in out.iter_mut().enumerate() {
                *out_j += jac.get(row, j) * theta_row;
            }
        }
        out
    }

    fn eta_dir_grad(
        &self,
        params: &ParameterVector,
        _x: &[f64],
        _direction: &ParameterVector,
    ) -> ParameterVector {
        params.zeros_like()
    }
}

/// NLL of an exponential family composed with a natural-parameter model.
#[derive(Clone)]
pub struct ExpFamLoss {
    pub family: Family,
    pub model: Arc<dyn NaturalParamModel>,
}

impl ExpFamLoss {
    pub fn new(family: Family, model: Arc<dyn NaturalParamModel>) -> Self {
        Self { family, model }
    }

    /// Logistic loss on raw features.
    pub fn logistic(dim: usize) -> Self {
        Self::new(Family::Bernoulli, Arc::new(LinearModel::raw(dim)))
    }

    /// Unit-variance Gaussian NLL on raw features.
    pub fn gaussian(dim: usize) -> Self {
        Self::new(Family::GaussianUnit, Arc::new(LinearModel::raw(dim)))
    }
}

impl LossFunction for ExpFamLoss {
    fn param_layout(&self) -> Arc<ParamLayout> {
        self.model.layout()
    }

    fn evaluate(&self, params: &ParameterVector, example: &Example) -> f64 {
        let eta = self.model.eta(params, &example.x);
        self.family.log_partition(eta) - eta * self.family.sufficient_stat(example.y)
    }

    fn gradient(&self, params: &ParameterVector, example: &Example) -> ParameterVector {
        let eta = self.model.eta(params, &example.x);
        let residual = self.family.mean(eta) - self.family.sufficient_stat(example.y);
        self.model.eta_grad(params, &example.x).scale(residual)
    }

    fn hvp_example(
        &self,
        params: &ParameterVector,
        example: &Example,
        direction: &ParameterVector,
    ) -> ParameterVector {
        let eta = self.model.eta(params, &example.x);
        let grad_eta = self.model.eta_grad(params, &example.x);
        let gauss_newton = grad_eta.scale(self.family.variance(eta) * grad_eta.dot(direction));
        let residual = self.family.mean(eta) - self.family.sufficient_stat(example.y);
        if residual == 0.0 {
            return gauss_newton;
        }
        let curvature = self.model.eta_dir_grad(params, &example.x, direction);
        gauss_newton.axpy(residual, &curvature)
    }

    fn ggn_vp_example(
        &self,
        params: &ParameterVector,
        example: &Example,
        direction: &ParameterVector,
    ) -> ParameterVector {
        let eta = self.model.eta(params, &example.x);
        let grad_eta = self.model.eta_grad(params, &example.x);
        grad_eta.scale(self.family.variance(eta) * grad_eta.dot(direction))
    }
}

/// Gradient of the label-expected loss at a candidate input:
/// ∇_θ η_θ(x) · (A′(η_θ(x)) − true_mean), where `true_mean` estimates the
/// data-generating predictive mean at x.
pub fn expected_loss_grad(
    family: Family,
    model: &dyn NaturalParamModel,
    params: &ParameterVector,
    x: &[f64],
    true_mean: f64,
) -> ParameterVector {
    let eta = model.eta(params, x);
    let bias = family.mean(eta) - true_mean;
    model.eta_grad(params, x).scale(bias)
}
