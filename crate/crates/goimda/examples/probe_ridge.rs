//! Diagnostic: test accuracy of the ridge-logistic fit on the simulation
//! generator across data sizes and ridge strengths.

use std::sync::Arc;

use goimda::benchfuncs::{gen_ppca_logistic, PpcaTask};
use goimda::expfam::{Family, IdentityFeatures};
use goimda::model::{GlmTemplate, ModelTemplate};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let d = 20;
    for &ridge in &[1e-4, 1e-3, 1e-2, 3e-2, 1e-1] {
        print!("ridge={ridge:7.0e}  ");
        for &n in &[10usize, 25, 50, 100, 152, 400] {
            let mut acc_sum = 0.0;
            let reps = 20;
            for seed in 0..reps {
                let mut rng = ChaCha20Rng::seed_from_u64(31000 + seed);
                let task = PpcaTask::sample(d, 3, 0.1, &mut rng);
                let train = gen_ppca_logistic(&task, n, &mut rng);
                let test = gen_ppca_logistic(&task, 2000, &mut rng);
                let template = GlmTemplate::new(
                    Family::Bernoulli,
                    Arc::new(IdentityFeatures { dim: d }),
                    ridge,
                );
                let (theta, _) = template.fit(&train, None, 0).unwrap();
                let model = template.model();
                let correct = test
                    .iter()
                    .filter(|e| {
                        let p = Family::Bernoulli.mean(model.eta(&theta, &e.x));
                        (p >= 0.5) == (e.y >= 0.5)
                    })
                    .count();
                acc_sum += correct as f64 / 2000.0;
            }
            print!("n={n}: {:.3}  ", acc_sum / reps as f64);
        }
        println!();
    }
}
