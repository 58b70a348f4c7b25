//! Noisy benchmark objectives and the synthetic logistic data generator.
//!
//! The 2-D rescaled Branin maps the unit square onto the classic domain
//! internally (x̄₁ = 15x₁ − 5, x̄₂ = 15x₂) so its three global minima sit at
//! f* ≈ −1.0474; the drop-wave and Ackley functions use their standard boxes.
//! Every objective carries its known optimum, verified at construction.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffcore::{dot, Example, ParameterVector};
use crate::expfam::sigmoid;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown objective '{0}'")]
    UnknownObjective(String),
    #[error("objective optimum failed verification: |f(x*) - f*| = {gap}")]
    OptimumMismatch { gap: f64 },
}

/// Rescaled Branin on the unit square.
pub fn branin(x: &[f64]) -> f64 {
    assert_eq!(x.len(), 2, "branin is 2-dimensional");
    let xb1 = 15.0 * x[0] - 5.0;
    let xb2 = 15.0 * x[1];
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let s = 10.0;
    let t = 1.0 / (8.0 * PI);
    let inner = xb2 - b * xb1 * xb1 + c * xb1 - 6.0;
    (inner * inner + s * (1.0 - t) * xb1.cos() - 44.81) / 51.95
}

/// Drop-wave on [−5.12, 5.12]²; radially symmetric, highly multimodal.
pub fn dropwave(x: &[f64]) -> f64 {
    assert_eq!(x.len(), 2, "dropwave is 2-dimensional");
    let r2 = x[0] * x[0] + x[1] * x[1];
    -(1.0 + (12.0 * r2.sqrt()).cos()) / (0.5 * r2 + 2.0)
}

/// Ackley on [−5, 5]^d with a = 20, b = 0.2, c = 2π.
pub fn ackley(x: &[f64]) -> f64 {
    assert!(!x.is_empty());
    let d = x.len() as f64;
    let sum_sq: f64 = x.iter().map(|v| v * v).sum();
    let sum_cos: f64 = x.iter().map(|v| (2.0 * PI * v).cos()).sum();
    -20.0 * (-0.2 * (sum_sq / d).sqrt()).exp() - (sum_cos / d).exp() + 20.0 + E
}

/// A deterministic ground-truth function observed through Gaussian noise.
pub struct NoisyObjective {
    pub name: &'static str,
    pub f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub noise_sd: f64,
    pub bounds: Vec<(f64, f64)>,
    /// (minimizer locations, common minimum value)
    pub known_optimum: (Vec<Vec<f64>>, f64),
}

impl NoisyObjective {
    pub fn new(
        name: &'static str,
        f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        noise_sd: f64,
        bounds: Vec<(f64, f64)>,
        known_optimum: (Vec<Vec<f64>>, f64),
    ) -> Result<Self, BenchError> {
        for location in &known_optimum.0 {
            let gap = ((f)(location) - known_optimum.1).abs();
            if gap > 1e-9 {
                return Err(BenchError::OptimumMismatch { gap });
            }
        }
        Ok(Self {
            name,
            f,
            noise_sd,
            bounds,
            known_optimum,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn optimum_value(&self) -> f64 {
        self.known_optimum.1
    }
}

/// One noisy query y = f(x) + σ·ε, ε ~ N(0,1). Deterministic per rng state.
pub fn observe<R: Rng + ?Sized>(objective: &NoisyObjective, x: &[f64], rng: &mut R) -> f64 {
    objective.evaluate(x) + objective.noise_sd * rng.sample::<f64, _>(StandardNormal)
}

/// Branin minimizers on the unit square. The inner quadratic vanishes and the
/// cosine term is stationary exactly at x̄₁ ∈ {−π, π, 3π}, with
/// x̄₂ = b x̄₁² − c x̄₁ + 6; mapped back through the input rescaling.
pub fn branin_minimizers() -> Vec<Vec<f64>> {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    [-PI, PI, 3.0 * PI]
        .iter()
        .map(|&xb1| {
            let xb2 = b * xb1 * xb1 - c * xb1 + 6.0;
            vec![(xb1 + 5.0) / 15.0, xb2 / 15.0]
        })
        .collect()
}

/// Objective registry addressable by name: "branin", "dropwave", "ackley5".
pub fn objective_by_name(name: &str, noise_sd: f64) -> Result<NoisyObjective, BenchError> {
    match name {
        "branin" => {
            let minimizers = branin_minimizers();
            let value = branin(&minimizers[0]);
            NoisyObjective::new(
                "branin",
                Box::new(|x| branin(x)),
                noise_sd,
                vec![(0.0, 1.0), (0.0, 1.0)],
                (minimizers, value),
            )
        }
        "dropwave" => NoisyObjective::new(
            "dropwave",
            Box::new(|x| dropwave(x)),
            noise_sd,
            vec![(-5.12, 5.12), (-5.12, 5.12)],
            (vec![vec![0.0, 0.0]], -1.0),
        ),
        "ackley5" => NoisyObjective::new(
            "ackley5",
            Box::new(|x| ackley(x)),
            noise_sd,
            vec![(-5.0, 5.0); 5],
            (vec![vec![0.0; 5]], 0.0),
        ),
        other => Err(BenchError::UnknownObjective(other.to_string())),
    }
}

/// Low-rank latent-factor inputs with Bernoulli labels: x = Wz + ε with
/// z ~ N(0, I_l), ε ~ N(0, σ²I_d), y ~ Bernoulli(σ(xᵀθ₀)).
pub struct PpcaTask {
    pub loading: Vec<Vec<f64>>, // d × l
    pub noise_sd: f64,
    pub theta_true: ParameterVector,
    pub input_dim: usize,
    pub latent_dim: usize,
}

impl PpcaTask {
    /// Draws W and θ₀ i.i.d. standard normal for one replication.
    pub fn sample<R: Rng + ?Sized>(
        input_dim: usize,
        latent_dim: usize,
        noise_sd: f64,
        rng: &mut R,
    ) -> Self {
        Self::sample_scaled(input_dim, latent_dim, noise_sd, 1.0, rng)
    }

    /// As [`PpcaTask::sample`] with θ₀ scaled by `theta_scale`. Larger scales
    /// sharpen the labels and raise the achievable accuracy ceiling.
    pub fn sample_scaled<R: Rng + ?Sized>(
        input_dim: usize,
        latent_dim: usize,
        noise_sd: f64,
        theta_scale: f64,
        rng: &mut R,
    ) -> Self {
        assert!(latent_dim < input_dim);
        let loading = (0..input_dim)
            .map(|_| {
                (0..latent_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let theta_true = ParameterVector::flat(
            (0..input_dim)
                .map(|_| theta_scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        Self {
            loading,
            noise_sd,
            theta_true,
            input_dim,
            latent_dim,
        }
    }

    pub fn draw_input<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.loading
            .iter()
            .map(|row| dot(row, &z) + self.noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn label_probability(&self, x: &[f64]) -> f64 {
        sigmoid(dot(x, self.theta_true.as_slice()))
    }
}

/// n labeled pairs from the task.
pub fn gen_ppca_logistic<R: Rng + ?Sized>(task: &PpcaTask, n: usize, rng: &mut R) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let x = task.draw_input(rng);
            let y = f64::from(rng.gen::<f64>() < task.label_probability(&x));
            Example::new(x, y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn branin_minima_hit_the_reported_value() {
        for loc in branin_minimizers() {
            let v = branin(&loc);
            assert!((v + 1.0474).abs() < 5e-4, "f({loc:?}) = {v}");
        }
    }

    #[test]
    fn branin_origin_value() {
        // frozen from arbitrary-precision evaluation of the rescaled form
        assert!((branin(&[0.0, 0.0]) - 4.876209740358165).abs() < 1e-12);
    }

    #[test]
    fn branin_is_continuous_at_small_scales() {
        let a = branin(&[0.35, 0.42]);
        let b = branin(&[0.35 + 1e-8, 0.42]);
        assert!((a - b).abs() <= 1e-6);
    }

    #[test]
    fn dropwave_identities() {
        assert_eq!(dropwave(&[0.0, 0.0]), -1.0);
        // radial symmetry
        let v1 = dropwave(&[1.2, -0.7]);
        assert!((v1 - dropwave(&[-0.7, 1.2])).abs() < 1e-15);
        assert!((v1 - dropwave(&[-1.2, -0.7])).abs() < 1e-15);
        // first ring where the cosine hits -1: radius π/12, numerator 0
        let r = PI / 12.0;
        assert!(dropwave(&[r, 0.0]).abs() < 1e-15);
        // range check
        for i in 0..100 {
            let x = [-5.12 + 0.1 * i as f64, 5.12 - 0.1 * i as f64];
            let v = dropwave(&x);
            assert!((-1.0..=0.0).contains(&v));
        }
    }

    #[test]
    fn ackley_identities() {
        assert!(ackley(&[0.0; 5]).abs() < 1e-12);
        // frozen from arbitrary-precision evaluation
        assert!((ackley(&[1.0; 5]) - 3.6253849384403628).abs() < 1e-12);
        // permutation invariance
        let v = ackley(&[0.3, -1.2, 2.0, 0.0, 0.7]);
        let w = ackley(&[2.0, 0.3, 0.7, -1.2, 0.0]);
        assert!((v - w).abs() < 1e-12);
        assert!(v >= 0.0);
    }

    #[test]
    fn observe_semantics() {
        let mut objective = objective_by_name("branin", 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.3, 0.3];
        assert_eq!(observe(&objective, &x, &mut rng), branin(&x));

        objective.noise_sd = 0.1;
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            observe(&objective, &x, &mut r1),
            observe(&objective, &x, &mut r2)
        );
    }

    #[test]
    fn observe_mean_matches_truth() {
        let objective = objective_by_name("dropwave", 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [1.0, 1.0];
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| observe(&objective, &x, &mut rng)).sum::<f64>() / n as f64;
        let se = 0.2 / (n as f64).sqrt();
        assert!((mean - dropwave(&x)).abs() < 3.0 * se);
    }

    #[test]
    fn observation_noise_looks_gaussian() {
        // Kolmogorov-Smirnov on standardized residuals at alpha = 0.01
        let objective = objective_by_name("branin", 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = [0.5, 0.5];
        let f = branin(&x);
        let n = 10_000usize;
        let mut residuals: Vec<f64> = (0..n)
            .map(|_| (observe(&objective, &x, &mut rng) - f) / 0.1)
            .collect();
        residuals.sort_by(f64::total_cmp);
        let normal_cdf = |z: f64| 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
        let mut ks: f64 = 0.0;
        for (i, r) in residuals.iter().enumerate() {
            let cdf = normal_cdf(*r);
            let hi = (i + 1) as f64 / n as f64;
            let lo = i as f64 / n as f64;
            ks = ks.max((cdf - hi).abs()).max((cdf - lo).abs());
        }
        let critical = 1.63 / (n as f64).sqrt(); // alpha = 0.01
        assert!(ks < critical, "KS statistic {ks} over critical {critical}");
    }

    #[test]
    fn ppca_covariance_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let task = PpcaTask::sample(4, 2, 0.1, &mut rng);
        let n = 100_000usize;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| task.draw_input(&mut rng)).collect();
        // empirical covariance (mean is 0 by construction)
        let d = task.input_dim;
        let mut cov = vec![vec![0.0; d]; d];
        for x in &draws {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += x[i] * x[j] / n as f64;
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                let mut expected: f64 = dot(&task.loading[i], &task.loading[j]);
                if i == j {
                    expected += 0.01;
                }
                // rough bound on the entry standard error
                let se = ((expected.abs() + task.loading[i].len() as f64) / (n as f64).sqrt())
                    .max(1e-3);
                assert!(
                    (cov[i][j] - expected).abs() < 3.0 * se,
                    "entry ({i},{j}): {} vs {expected}",
                    cov[i][j]
                );
            }
        }
    }

    #[test]
    fn zero_parameter_labels_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut task = PpcaTask::sample(5, 2, 0.1, &mut rng);
        task.theta_true = ParameterVector::flat(vec![0.0; 5]);
        let n = 50_000;
        let data = gen_ppca_logistic(&task, n, &mut rng);
        let frequency: f64 = data.iter().map(|e| e.y).sum::<f64>() / n as f64;
        let se = 0.5 / (n as f64).sqrt();
        assert!((frequency - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn paper_scale_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let task = PpcaTask::sample(20, 3, 0.1, &mut rng);
        assert_eq!(task.input_dim, 20);
        assert_eq!(task.latent_dim, 3);
        let x = task.draw_input(&mut rng);
        assert_eq!(x.len(), 20);
    }

    #[test]
    fn registry_rejects_unknown_names() {
        assert!(matches!(
            objective_by_name("nope", 0.1),
            Err(BenchError::UnknownObjective(_))
        ));
    }
}
