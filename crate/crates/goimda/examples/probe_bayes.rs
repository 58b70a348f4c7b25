//! Diagnostic: Bayes accuracy of the simulation generator.

use goimda::benchfuncs::{gen_ppca_logistic, PpcaTask};
use goimda::expfam::sigmoid;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut acc_sum = 0.0;
    let mut eta_abs = 0.0;
    let reps = 20;
    for seed in 0..reps {
        let mut rng = ChaCha20Rng::seed_from_u64(77000 + seed);
        let task = PpcaTask::sample(20, 3, 0.1, &mut rng);
        let test = gen_ppca_logistic(&task, 4000, &mut rng);
        let correct = test
            .iter()
            .filter(|e| {
                let p = sigmoid(goimda::diffcore::dot(&e.x, task.theta_true.as_slice()));
                (p >= 0.5) == (e.y >= 0.5)
            })
            .count();
        acc_sum += correct as f64 / 4000.0;
        eta_abs += test
            .iter()
            .map(|e| goimda::diffcore::dot(&e.x, task.theta_true.as_slice()).abs())
            .sum::<f64>()
            / 4000.0;
    }
    println!("bayes accuracy  = {:.4}", acc_sum / reps as f64);
    println!("mean |eta|      = {:.3}", eta_abs / reps as f64);
}
