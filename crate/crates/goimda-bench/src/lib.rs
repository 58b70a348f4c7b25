//! Shared fixtures for the kernel benchmarks.

use std::sync::Arc;

use goimda::diffcore::{Example, ParameterVector};
use goimda::expfam::{ExpFamLoss, Family, IdentityFeatures};
use goimda::mlp::Mlp;
use goimda::model::GlmTemplate;

/// Deterministic pseudo-random stream without external dependencies
/// (benchmarks only need stable, non-degenerate inputs).
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        // Box-Muller
        let u1 = self.uniform().max(1e-12);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

pub fn logistic_batch(dim: usize, n: usize, seed: u64) -> (ExpFamLoss, ParameterVector, Vec<Example>) {
    let mut rng = SplitMix(seed);
    let loss = ExpFamLoss::logistic(dim);
    let params = ParameterVector::flat((0..dim).map(|_| 0.3 * rng.normal()).collect());
    let batch = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let y = f64::from(rng.uniform() < 0.5);
            Example::new(x, y)
        })
        .collect();
    (loss, params, batch)
}

pub fn mlp_batch(dim: usize, hidden: usize, n: usize, seed: u64) -> (ExpFamLoss, ParameterVector, Vec<Example>) {
    let mut rng = SplitMix(seed);
    let mlp = Arc::new(Mlp::new(dim, &[hidden]));
    let loss = ExpFamLoss::new(Family::GaussianUnit, mlp.clone());
    let values: Vec<f64> = (0..loss.model.param_dim()).map(|_| 0.3 * rng.normal()).collect();
    let params = ParameterVector::flat(values);
    let batch = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            Example::new(x, rng.normal())
        })
        .collect();
    (loss, params, batch)
}

pub fn glm_template(dim: usize) -> GlmTemplate {
    GlmTemplate::new(Family::Bernoulli, Arc::new(IdentityFeatures { dim }), 1e-4)
}
