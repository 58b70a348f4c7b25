//! Diagnostic: Bayes ceiling and learning curve under theta scaling.

use std::sync::Arc;

use goimda::benchfuncs::{gen_ppca_logistic, PpcaTask};
use goimda::expfam::{sigmoid, Family, IdentityFeatures};
use goimda::model::{GlmTemplate, ModelTemplate};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    for &scale in &[2.0, 3.0, 5.0] {
        for &ridge in &[1e-3, 1e-2] {
            let mut bayes = 0.0;
            let mut acc: Vec<f64> = vec![0.0; 6];
            let sizes = [10usize, 25, 50, 75, 100, 152];
            let reps = 15;
            for seed in 0..reps {
                let mut rng = ChaCha20Rng::seed_from_u64(51000 + seed);
                let task = PpcaTask::sample_scaled(20, 3, 0.1, scale, &mut rng);
                let test = gen_ppca_logistic(&task, 2000, &mut rng);
                bayes += test
                    .iter()
                    .filter(|e| {
                        let p = sigmoid(goimda::diffcore::dot(&e.x, task.theta_true.as_slice()));
                        (p >= 0.5) == (e.y >= 0.5)
                    })
                    .count() as f64
                    / 2000.0;
                let train = gen_ppca_logistic(&task, 152, &mut rng);
                for (i, &n) in sizes.iter().enumerate() {
                    let template = GlmTemplate::new(
                        Family::Bernoulli,
                        Arc::new(IdentityFeatures { dim: 20 }),
                        ridge,
                    );
                    let (theta, _) = template.fit(&train[..n], None, 0).unwrap();
                    let model = template.model();
                    acc[i] += test
                        .iter()
                        .filter(|e| {
                            let p = Family::Bernoulli.mean(model.eta(&theta, &e.x));
                            (p >= 0.5) == (e.y >= 0.5)
                        })
                        .count() as f64
                        / 2000.0;
                }
            }
            print!(
                "scale={scale} ridge={ridge:7.0e} bayes={:.3} | ",
                bayes / reps as f64
            );
            for (i, &n) in sizes.iter().enumerate() {
                print!("n={n}: {:.3}  ", acc[i] / reps as f64);
            }
            println!();
        }
    }
}
