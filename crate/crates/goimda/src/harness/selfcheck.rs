//! Quick numeric self-check battery: runs the core oracle identities and
//! reports one pass/fail line per check. Wired to the `selfcheck` CLI
//! subcommand.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::benchfuncs::{ackley, branin, branin_minimizers, dropwave};
use crate::diffcore::{dense_hessian, hvp, DenseMatrix, Example, ParameterVector};
use crate::expfam::ExpFamLoss;
use crate::glm::logdet_update_check;
use crate::ihvp::{direct_solve, solve_cg, DenseOracle, IhvpConfig};

#[derive(Debug, Clone)]
pub struct SelfcheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_pd(dim: usize, rng: &mut ChaCha20Rng) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            g.set(i, j, rng.sample::<f64, _>(StandardNormal));
        }
    }
    let mut h = DenseMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = 0.0;
            for k in 0..dim {
                acc += g.get(k, i) * g.get(k, j);
            }
            h.set(i, j, acc / dim as f64);
        }
    }
    h.add_diagonal(0.1);
    h
}

/// Runs the battery; deterministic.
pub fn run_selfcheck() -> Vec<SelfcheckResult> {
    let mut results = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(0x5E1F);

    // benchmark constants
    {
        let mut worst: f64 = 0.0;
        for loc in branin_minimizers() {
            worst = worst.max((branin(&loc) + 1.0474).abs());
        }
        results.push(SelfcheckResult {
            name: "branin_minimum_value",
            passed: worst <= 5e-4,
            detail: format!("max |f(x*) + 1.0474| = {worst:.2e}"),
        });
        results.push(SelfcheckResult {
            name: "dropwave_origin",
            passed: dropwave(&[0.0, 0.0]) == -1.0,
            detail: format!("f(0,0) = {}", dropwave(&[0.0, 0.0])),
        });
        let a0 = ackley(&[0.0; 5]).abs();
        results.push(SelfcheckResult {
            name: "ackley_origin",
            passed: a0 <= 1e-12,
            detail: format!("|f(0)| = {a0:.2e}"),
        });
    }

    // CG against the dense factorization
    {
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let dim = 12;
            let h = random_pd(dim, &mut rng);
            let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let cfg = IhvpConfig {
                damping: 1e-3,
                tol: 1e-12,
                max_iters: 300,
                ..Default::default()
            };
            let (u, _) = solve_cg(&DenseOracle { matrix: h.clone() }, &v, &cfg).unwrap();
            let exact = direct_solve(&h, &v, 1e-3).unwrap();
            let num: f64 = u
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
        results.push(SelfcheckResult {
            name: "cg_vs_direct_solve",
            passed: worst <= 1e-6,
            detail: format!("worst relative error {worst:.2e}"),
        });
    }

    // HVP against the materialized Hessian on a logistic instance
    {
        let dim = 6;
        let loss = ExpFamLoss::logistic(dim);
        let params = ParameterVector::flat(
            (0..dim).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect(),
        );
        let batch: Vec<Example> = (0..30)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Example::new(x, f64::from(rng.gen::<f64>() < 0.5))
            })
            .collect();
        let h = dense_hessian(&loss, &params, &batch).unwrap();
        let v = params.with_values(
            (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        );
        let hv = hvp(&loss, &params, &batch, &v).unwrap();
        let dense_v = h.matvec(v.as_slice());
        let gap: f64 = hv
            .as_slice()
            .iter()
            .zip(&dense_v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        results.push(SelfcheckResult {
            name: "hvp_vs_dense_hessian",
            passed: gap <= 1e-8,
            detail: format!("max component gap {gap:.2e}"),
        });
    }

    // rank-one log-determinant identity
    {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let h = random_pd(5, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (lhs, rhs) = logdet_update_check(&h, &x, 0.25).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
        results.push(SelfcheckResult {
            name: "logdet_rank_one_identity",
            passed: worst <= 1e-10,
            detail: format!("worst |lhs - rhs| = {worst:.2e}"),
        });
    }

    results
}
