//! Diagnostic: correlation of jackknife bias-estimate candidates with the
//! true parameter deviation on the logistic simulation, across data sizes.

use std::sync::Arc;

use goimda::benchfuncs::{gen_ppca_logistic, PpcaTask};
use goimda::expfam::{Family, IdentityFeatures};
use goimda::model::{GlmTemplate, ModelTemplate};
use goimda::surrogate::train_ensemble;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn main() {
    let d = 20;
    let r = 10;
    for &n in &[12usize, 30, 60, 100, 150, 300] {
        let mut simple = Vec::new(); // theta_hat - phi_bar
        let mut classical = Vec::new(); // (r-1)(phi_bar - theta_hat)
        let mut truth = Vec::new();
        for seed in 0..50u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(9000 + seed);
            let task = PpcaTask::sample(d, 3, 0.1, &mut rng);
            let data = gen_ppca_logistic(&task, n, &mut rng);
            let template =
                GlmTemplate::new(Family::Bernoulli, Arc::new(IdentityFeatures { dim: d }), 1e-4);
            let (theta, _) = template.fit(&data, None, 0).unwrap();
            let ens = train_ensemble(&data, r.min(n), &template, &mut rng).unwrap();
            let diff = ens.bias_estimate(&theta).unwrap(); // theta - phi_bar
            for j in 0..d {
                let s = diff.as_slice()[j];
                simple.push(s);
                classical.push(-(r as f64 - 1.0) * s);
                truth.push(theta.as_slice()[j] - task.theta_true.as_slice()[j]);
            }
        }
        println!(
            "n={n:4}  corr(theta-phibar, true)={:+.3}  corr((r-1)(phibar-theta), true)={:+.3}",
            pearson(&simple, &truth),
            pearson(&classical, &truth)
        );
    }
}
