//! Model templates: a uniform "fit this architecture on that data" interface
//! used by the acquisition loop and the jackknife ensemble. A template owns
//! the architecture/family choice; fits return flat parameters plus a report.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::diffcore::{Example, ParameterVector};
use crate::expfam::{ExpFamLoss, Family, FeatureMap, LinearModel, NaturalParamModel};
use crate::glm::{fit_glm_with, FitReport, GlmError, NewtonOptions};
use crate::mlp::Mlp;
use crate::train::{fit_adam, AdamConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error("fit produced non-finite parameters")]
    NonFiniteFit,
}

pub trait ModelTemplate: Send + Sync {
    fn family(&self) -> Family;

    /// The shared architecture all fits of this template use.
    fn model(&self) -> Arc<dyn NaturalParamModel>;

    /// Fits on `data`, optionally warm-starting from `warm`. `seed` drives any
    /// stochastic initialization; deterministic trainers ignore it.
    fn fit(
        &self,
        data: &[Example],
        warm: Option<&ParameterVector>,
        seed: u64,
    ) -> Result<(ParameterVector, FitReport), ModelError>;

    /// Whether parameters of independently trained fits live in a comparable
    /// coordinate system (true for convex GLMs; true for MLPs only under a
    /// shared initialization).
    fn params_comparable(&self) -> bool;

    /// Ridge/weight-decay strength of the training objective; used as the
    /// matching curvature damping in influence computations.
    fn ridge(&self) -> f64;
}

/// Canonical-link GLM over a fixed feature map.
#[derive(Clone)]
pub struct GlmTemplate {
    pub family: Family,
    pub features: Arc<dyn FeatureMap>,
    pub ridge: f64,
    pub newton: NewtonOptions,
    model: Arc<LinearModel>,
}

impl GlmTemplate {
    pub fn new(family: Family, features: Arc<dyn FeatureMap>, ridge: f64) -> Self {
        let model = Arc::new(LinearModel::new(Arc::clone(&features)));
        Self {
            family,
            features,
            ridge,
            newton: NewtonOptions::default(),
            model,
        }
    }

    pub fn featurize(&self, data: &[Example]) -> Vec<Example> {
        data.iter()
            .map(|e| Example::new(self.features.eval(&e.x), e.y))
            .collect()
    }
}

impl ModelTemplate for GlmTemplate {
    fn family(&self) -> Family {
        self.family
    }

    fn model(&self) -> Arc<dyn NaturalParamModel> {
        self.model.clone()
    }

    fn fit(
        &self,
        data: &[Example],
        warm: Option<&ParameterVector>,
        _seed: u64,
    ) -> Result<(ParameterVector, FitReport), ModelError> {
        let featurized = self.featurize(data);
        let init = match warm {
            Some(w) => w.clone(),
            None => ParameterVector::zeros(self.model.layout()),
        };
        let (model, report) = fit_glm_with(&featurized, self.family, self.ridge, &init, self.newton)?;
        if !model.theta.is_finite() {
            return Err(ModelError::NonFiniteFit);
        }
        Ok((model.theta, report))
    }

    fn params_comparable(&self) -> bool {
        true
    }

    fn ridge(&self) -> f64 {
        self.ridge
    }
}

/// Small tanh MLP trained with full-batch Adam.
#[derive(Clone)]
pub struct MlpTemplate {
    pub family: Family,
    pub mlp: Arc<Mlp>,
    pub adam: AdamConfig,
    /// When set, every fit initializes from this seed, making parameter
    /// averages across fits meaningful.
    pub shared_init: Option<u64>,
}

impl MlpTemplate {
    pub fn new(family: Family, mlp: Arc<Mlp>, adam: AdamConfig) -> Self {
        Self {
            family,
            mlp,
            adam,
            shared_init: None,
        }
    }
}

impl ModelTemplate for MlpTemplate {
    fn family(&self) -> Family {
        self.family
    }

    fn model(&self) -> Arc<dyn NaturalParamModel> {
        self.mlp.clone()
    }

    fn fit(
        &self,
        data: &[Example],
        warm: Option<&ParameterVector>,
        seed: u64,
    ) -> Result<(ParameterVector, FitReport), ModelError> {
        let loss = ExpFamLoss::new(self.family, self.mlp.clone());
        let init = match warm {
            Some(w) => w.clone(),
            None => {
                let mut rng = ChaCha20Rng::seed_from_u64(self.shared_init.unwrap_or(seed));
                self.mlp.init_params(&mut rng)
            }
        };
        let (params, report) = fit_adam(&loss, data, &init, &self.adam);
        if !params.is_finite() {
            return Err(ModelError::NonFiniteFit);
        }
        Ok((params, report))
    }

    fn params_comparable(&self) -> bool {
        self.shared_init.is_some()
    }

    fn ridge(&self) -> f64 {
        self.adam.weight_decay
    }
}
