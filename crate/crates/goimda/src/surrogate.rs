//! Jackknife deep-ensemble surrogate: a label-expectation provider and a
//! parameter-bias estimator standing in for the unknown data-generating
//! distribution.
//!
//! Fold scheme: shuffle once with the caller's rng, split into r folds of
//! near-equal size, and train member i on everything except fold i. Member
//! training is independent, so the assembled ensemble is immutable and
//! read-shareable.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffcore::{Example, ParameterVector};
use crate::expfam::{Family, NaturalParamModel};
use crate::glm::FitReport;
use crate::model::{ModelError, ModelTemplate};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("need at least {needed} examples for {r} folds, got {got}")]
    TooFewExamples { needed: usize, r: usize, got: usize },
    #[error("ensemble size must be at least 2, got {0}")]
    TooFewMembers(usize),
    #[error("fewer than 2 members survived training")]
    TooFewSurvivors,
    #[error("member parameters are not comparable with the main model")]
    ParamsNotComparable,
    #[error("layout mismatch between main parameters and members")]
    LayoutMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub params: ParameterVector,
    /// Indices of the held-out fold (the member trained on the complement).
    pub fold: Vec<usize>,
    pub init_seed: u64,
    pub report: FitReport,
    /// Unhealthy members (diverged fits) are excluded from all averages.
    pub healthy: bool,
}

pub struct JackknifeEnsemble {
    pub family: Family,
    model: Arc<dyn NaturalParamModel>,
    pub members: Vec<EnsembleMember>,
    params_comparable: bool,
}

/// Trains r members on leave-fold-out resamples of `data`. The shuffle uses
/// the caller's rng; member init seeds are drawn from the same stream.
pub fn train_ensemble<R: Rng + ?Sized>(
    data: &[Example],
    r: usize,
    template: &dyn ModelTemplate,
    rng: &mut R,
) -> Result<JackknifeEnsemble, SurrogateError> {
    if r < 2 {
        return Err(SurrogateError::TooFewMembers(r));
    }
    if data.len() < r {
        return Err(SurrogateError::TooFewExamples {
            needed: r,
            r,
            got: data.len(),
        });
    }
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(rng);

    // near-equal contiguous folds over the shuffled order
    let base = data.len() / r;
    let remainder = data.len() % r;
    let mut folds = Vec::with_capacity(r);
    let mut cursor = 0usize;
    for i in 0..r {
        let len = base + usize::from(i < remainder);
        folds.push(indices[cursor..cursor + len].to_vec());
        cursor += len;
    }

    let mut members = Vec::with_capacity(r);
    let mut survivors = 0usize;
    for fold in folds {
        let init_seed: u64 = rng.gen();
        let train_set: Vec<Example> = {
            let mut held = vec![false; data.len()];
            for &i in &fold {
                held[i] = true;
            }
            data.iter()
                .enumerate()
                .filter(|(i, _)| !held[*i])
                .map(|(_, e)| e.clone())
                .collect()
        };
        match template.fit(&train_set, None, init_seed) {
            Ok((params, report)) => {
                survivors += 1;
                members.push(EnsembleMember {
                    params,
                    fold,
                    init_seed,
                    report,
                    healthy: true,
                });
            }
            Err(_) => {
                members.push(EnsembleMember {
                    params: ParameterVector::zeros(template.model().layout()),
                    fold,
                    init_seed,
                    report: FitReport {
                        converged: false,
                        iterations: 0,
                        grad_max_norm: f64::INFINITY,
                    },
                    healthy: false,
                });
            }
        }
    }
    if survivors < 2 {
        return Err(SurrogateError::TooFewSurvivors);
    }
    Ok(JackknifeEnsemble {
        family: template.family(),
        model: template.model(),
        members,
        params_comparable: template.params_comparable(),
    })
}

impl JackknifeEnsemble {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn model(&self) -> &Arc<dyn NaturalParamModel> {
        &self.model
    }

    fn healthy(&self) -> impl Iterator<Item = &EnsembleMember> {
        self.members.iter().filter(|m| m.healthy)
    }

    fn healthy_count(&self) -> f64 {
        self.healthy().count() as f64
    }

    /// Average of member predictive means at x.
    pub fn surrogate_mean(&self, x: &[f64]) -> f64 {
        let acc: f64 = self
            .healthy()
            .map(|m| self.family.mean(self.model.eta(&m.params, x)))
            .sum();
        acc / self.healthy_count()
    }

    /// Average natural parameter across members. This is the ensemble's
    /// estimate of the data-generating natural-parameter function.
    pub fn mean_eta(&self, x: &[f64]) -> f64 {
        let acc: f64 = self.healthy().map(|m| self.model.eta(&m.params, x)).sum();
        acc / self.healthy_count()
    }

    /// Input gradient of the mean natural-parameter function.
    pub fn mean_eta_input_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; x.len()];
        for member in self.healthy() {
            let g = self.model.eta_input_grad(&member.params, x);
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += gi;
            }
        }
        let count = self.healthy_count();
        for a in &mut acc {
            *a /= count;
        }
        acc
    }

    /// θ − mean of member parameters: the parameter-space bias estimate.
    /// Requires members whose parameters live in the same coordinate system
    /// as the main model.
    pub fn bias_estimate(
        &self,
        main_params: &ParameterVector,
    ) -> Result<ParameterVector, SurrogateError> {
        if !self.params_comparable {
            return Err(SurrogateError::ParamsNotComparable);
        }
        let mut mean = vec![0.0; main_params.len()];
        for member in self.healthy() {
            if member.params.len() != main_params.len() {
                return Err(SurrogateError::LayoutMismatch);
            }
            for (m, p) in mean.iter_mut().zip(member.params.as_slice()) {
                *m += p;
            }
        }
        let count = self.healthy_count();
        for m in &mut mean {
            *m /= count;
        }
        Ok(main_params.with_values(
            main_params
                .as_slice()
                .iter()
                .zip(&mean)
                .map(|(t, m)| t - m)
                .collect(),
        ))
    }

    /// E over labels drawn from the surrogate's predictive distribution at x.
    /// Bernoulli uses the exact closed form; Gaussian draws from the member
    /// mixture (uniform member, then unit-variance noise around its mean).
    pub fn expected_over_labels<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        f: &dyn Fn(f64) -> f64,
        n_draws: usize,
        rng: &mut R,
    ) -> f64 {
        match self.family {
            Family::Bernoulli => {
                let p = self.surrogate_mean(x).clamp(0.0, 1.0);
                p * f(1.0) + (1.0 - p) * f(0.0)
            }
            Family::GaussianUnit => {
                let means: Vec<f64> = self.healthy().map(|m| self.model.eta(&m.params, x)).collect();
                let draws = n_draws.max(1);
                let mut acc = 0.0;
                for _ in 0..draws {
                    let mean = means[rng.gen_range(0..means.len())];
                    let y = mean + rng.sample::<f64, _>(StandardNormal);
                    acc += f(y);
                }
                acc / draws as f64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::IdentityFeatures;
    use crate::model::GlmTemplate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_template(dim: usize, family: Family, ridge: f64) -> GlmTemplate {
        GlmTemplate::new(family, Arc::new(IdentityFeatures { dim }), ridge)
    }

    fn noiseless_linear_data(n: usize, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<Example> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..theta.len())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let y = crate::diffcore::dot(&x, theta);
                Example::new(x, y)
            })
            .collect()
    }

    #[test]
    fn folds_partition_the_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = noiseless_linear_data(10, &[1.0, -2.0], &mut rng);
        let template = linear_template(2, Family::GaussianUnit, 0.0);
        let ens = train_ensemble(&data, 2, &template, &mut rng).unwrap();
        assert_eq!(ens.members.len(), 2);
        assert_eq!(ens.members[0].fold.len(), 5);
        assert_eq!(ens.members[1].fold.len(), 5);
        let mut all: Vec<usize> = ens
            .members
            .iter()
            .flat_map(|m| m.fold.iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn member_folds_have_no_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = noiseless_linear_data(23, &[0.5, 0.5, -1.0], &mut rng);
        let template = linear_template(3, Family::GaussianUnit, 1e-8);
        let ens = train_ensemble(&data, 5, &template, &mut rng).unwrap();
        for member in &ens.members {
            let mut fold = member.fold.clone();
            fold.sort_unstable();
            fold.dedup();
            assert_eq!(fold.len(), member.fold.len());
        }
    }

    #[test]
    fn noiseless_linear_ensemble_matches_ols_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = [1.5, -0.7, 0.2];
        let data = noiseless_linear_data(30, &theta, &mut rng);
        let template = linear_template(3, Family::GaussianUnit, 0.0);
        let ens = train_ensemble(&data, 5, &template, &mut rng).unwrap();
        for probe in 0..10 {
            let x: Vec<f64> = (0..3).map(|j| ((probe * 3 + j) as f64 * 0.37).sin()).collect();
            let expected = crate::diffcore::dot(&x, &theta);
            assert!(
                (ens.surrogate_mean(&x) - expected).abs() < 1e-6,
                "probe {probe}"
            );
        }
    }

    #[test]
    fn surrogate_mean_averages_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = noiseless_linear_data(8, &[1.0], &mut rng);
        let template = linear_template(1, Family::GaussianUnit, 0.0);
        let mut ens = train_ensemble(&data, 2, &template, &mut rng).unwrap();
        ens.members[0].params = ParameterVector::flat(vec![0.2]);
        ens.members[1].params = ParameterVector::flat(vec![0.6]);
        assert!((ens.surrogate_mean(&[1.0]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_members_at_zero_predict_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Example> = (0..8)
            .map(|i| Example::new(vec![0.0], f64::from(i % 2 == 0)))
            .collect();
        let template = linear_template(1, Family::Bernoulli, 0.1);
        let ens = train_ensemble(&data, 4, &template, &mut rng).unwrap();
        assert!((ens.surrogate_mean(&[0.7]) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn bias_estimate_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = noiseless_linear_data(8, &[1.0, 1.0], &mut rng);
        let template = linear_template(2, Family::GaussianUnit, 0.0);
        let mut ens = train_ensemble(&data, 2, &template, &mut rng).unwrap();
        ens.members[0].params = ParameterVector::flat(vec![0.0, 0.0]);
        ens.members[1].params = ParameterVector::flat(vec![0.0, 0.0]);
        let main = ParameterVector::flat(vec![1.0, 1.0]);
        let bias = ens.bias_estimate(&main).unwrap();
        assert_eq!(bias.as_slice(), &[1.0, 1.0]);

        ens.members[0].params = main.clone();
        ens.members[1].params = main.clone();
        let bias = ens.bias_estimate(&main).unwrap();
        assert!(bias.max_norm() < 1e-15);
    }

    #[test]
    fn expected_over_labels_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<Example> = (0..8)
            .map(|i| Example::new(vec![0.0], f64::from(i % 2 == 0)))
            .collect();
        let template = linear_template(1, Family::Bernoulli, 0.1);
        let ens = train_ensemble(&data, 4, &template, &mut rng).unwrap();
        // constant function
        assert!((ens.expected_over_labels(&[0.3], &|_| 2.5, 10, &mut rng) - 2.5).abs() < 1e-12);
        // identity at p = 0.5
        assert!((ens.expected_over_labels(&[0.0], &|y| y, 10, &mut rng) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gaussian_expected_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // all members predict mean 1 at x = (1): E[y^2] = 1 + 1 = 2
        let data = noiseless_linear_data(12, &[1.0], &mut rng);
        let template = linear_template(1, Family::GaussianUnit, 0.0);
        let ens = train_ensemble(&data, 3, &template, &mut rng).unwrap();
        let n = 100_000;
        let est = ens.expected_over_labels(&[1.0], &|y| y * y, n, &mut rng);
        // var of y^2 for y ~ N(1,1): E[y^4] - E[y^2]^2 = (mu^4+6mu^2+3) - 4 = 6
        let se = (6.0f64 / n as f64).sqrt();
        assert!((est - 2.0).abs() < 3.0 * se, "est {est}");
    }

    #[test]
    fn expectation_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = noiseless_linear_data(12, &[0.5], &mut rng);
        let template = linear_template(1, Family::GaussianUnit, 0.0);
        let ens = train_ensemble(&data, 3, &template, &mut rng).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = ens.expected_over_labels(&[0.2], &|y| y.abs(), 1000, &mut r1);
        let b = ens.expected_over_labels(&[0.2], &|y| y.abs(), 1000, &mut r2);
        assert_eq!(a, b);
    }

    #[test]
    fn surrogate_mean_is_member_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = noiseless_linear_data(12, &[0.8, -0.4], &mut rng);
        let template = linear_template(2, Family::GaussianUnit, 0.0);
        let mut ens = train_ensemble(&data, 4, &template, &mut rng).unwrap();
        let x = [0.3, 0.9];
        let before = ens.surrogate_mean(&x);
        ens.members.reverse();
        assert!((ens.surrogate_mean(&x) - before).abs() < 1e-15);
    }

    #[test]
    fn rejects_too_small_ensembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = noiseless_linear_data(5, &[1.0], &mut rng);
        let template = linear_template(1, Family::GaussianUnit, 0.0);
        assert!(matches!(
            train_ensemble(&data, 1, &template, &mut rng),
            Err(SurrogateError::TooFewMembers(1))
        ));
        assert!(matches!(
            train_ensemble(&data, 6, &template, &mut rng),
            Err(SurrogateError::TooFewExamples { .. })
        ));
    }
}
