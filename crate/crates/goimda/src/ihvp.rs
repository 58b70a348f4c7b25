//! Inverse Hessian-vector-product solvers.
//!
//! Three routes to u ≈ (H + λI)⁻¹ v: conjugate gradient on the damped system
//! (optionally the normal-equation form (H² + λI)u = Hv), the LiSSA
//! truncated-Neumann recursion over stochastic minibatch curvature, and a
//! dense symmetric factorization used as a testing oracle. Solvers are
//! re-entrant; a single solve is sequential, and LiSSA takes an explicit
//! seeded random source per call.

use rand::Rng;
use thiserror::Error;

use crate::diffcore::{dot, norm, DenseMatrix, Example, HessianKind, LossFunction, ParameterVector};

#[derive(Debug, Error)]
pub enum IhvpError {
    #[error("dimension mismatch: oracle dim {oracle}, vector dim {vector}")]
    DimensionMismatch { oracle: usize, vector: usize },
    #[error("non-finite value at iteration {iteration}")]
    NumericFailure { iteration: usize },
    #[error("LiSSA iterate diverged in repeat {repeat} at iteration {iteration}")]
    Divergence { repeat: usize, iteration: usize },
    #[error("matrix singular to machine precision after damping {damping}")]
    Singular { damping: f64 },
    #[error("matrix is not symmetric (gap {gap})")]
    NotSymmetric { gap: f64 },
    #[error("negative curvature persisted after {bumps} damping increases")]
    IndefiniteSystem { bumps: usize },
}

/// Linear operator view of the empirical Hessian.
pub trait HvpOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Full-batch product H v.
    fn apply(&self, v: &[f64]) -> Vec<f64>;

    /// Number of minibatches in the partition.
    fn num_minibatches(&self) -> usize {
        1
    }

    /// Product over one minibatch of the partition (mean over its examples).
    fn apply_minibatch(&self, v: &[f64], _batch: usize) -> Vec<f64> {
        self.apply(v)
    }
}

/// Oracle over an explicit matrix; one minibatch.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub matrix: DenseMatrix,
}

impl HvpOracle for DenseOracle {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.matvec(v)
    }
}

/// Oracle over a loss and dataset with a fixed contiguous partition.
pub struct LossHvpOracle<'a> {
    pub loss: &'a dyn LossFunction,
    pub params: &'a ParameterVector,
    pub data: &'a [Example],
    pub batch_size: usize,
    pub kind: HessianKind,
    /// Added to every product: models a ridge term in the objective.
    pub ridge: f64,
}

impl<'a> LossHvpOracle<'a> {
    pub fn new(
        loss: &'a dyn LossFunction,
        params: &'a ParameterVector,
        data: &'a [Example],
    ) -> Self {
        Self {
            loss,
            params,
            data,
            batch_size: 64,
            kind: HessianKind::Exact,
            ridge: 0.0,
        }
    }

    fn product_over(&self, v: &[f64], examples: &[Example]) -> Vec<f64> {
        let direction = self.params.with_values(v.to_vec());
        let hv = crate::diffcore::hvp_with(self.loss, self.params, examples, &direction, self.kind)
            .expect("non-empty batch with matching layout");
        let mut out = hv.into_values();
        if self.ridge != 0.0 {
            for (o, vi) in out.iter_mut().zip(v) {
                *o += self.ridge * vi;
            }
        }
        out
    }
}

impl HvpOracle for LossHvpOracle<'_> {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.product_over(v, self.data)
    }

    fn num_minibatches(&self) -> usize {
        self.data.len().div_ceil(self.batch_size).max(1)
    }

    fn apply_minibatch(&self, v: &[f64], batch: usize) -> Vec<f64> {
        let start = batch * self.batch_size;
        let end = (start + self.batch_size).min(self.data.len());
        self.product_over(v, &self.data[start..end])
    }
}

/// Solver settings shared by CG and LiSSA.
#[derive(Debug, Clone)]
pub struct IhvpConfig {
    /// Damping λ added to the Hessian.
    pub damping: f64,
    pub max_iters: usize,
    /// Relative residual target for CG.
    pub tol: f64,
    /// LiSSA step scale; values ≤ 0 trigger an automatic choice from a power
    /// iteration estimate of the top eigenvalue.
    pub lissa_scale: f64,
    pub lissa_batch: usize,
    pub lissa_repeats: usize,
    /// Solve (H² + λI)u = Hv instead of (H + λI)u = v.
    pub normal_equations: bool,
}

impl Default for IhvpConfig {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            max_iters: 200,
            tol: 1e-10,
            lissa_scale: 0.0,
            lissa_batch: 64,
            lissa_repeats: 2,
            normal_equations: false,
        }
    }
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub residual_norm: f64,
    pub relative_residual: f64,
    pub converged: bool,
    pub effective_damping: f64,
    pub damping_bumps: usize,
    pub oracle_calls: usize,
    /// Iterate norms per LiSSA iteration of the last repeat.
    pub iterate_norms: Vec<f64>,
    /// Set when the configured LiSSA scale fails the spectral-radius check.
    pub scale_warning: bool,
}

enum CgOutcome {
    Done(Vec<f64>, usize, f64, bool),
    NegativeCurvature,
}

fn cg_once(
    oracle: &dyn HvpOracle,
    rhs: &[f64],
    damping: f64,
    cfg: &IhvpConfig,
    calls: &mut usize,
) -> Result<CgOutcome, IhvpError> {
    let apply = |v: &[f64], calls: &mut usize| -> Vec<f64> {
        let mut out = if cfg.normal_equations {
            let hv = oracle.apply(v);
            *calls += 2;
            oracle.apply(&hv)
        } else {
            *calls += 1;
            oracle.apply(v)
        };
        for (o, vi) in out.iter_mut().zip(v) {
            *o += damping * vi;
        }
        out
    };

    let n = rhs.len();
    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        return Ok(CgOutcome::Done(vec![0.0; n], 0, 0.0, true));
    }
    let mut u = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for iteration in 0..cfg.max_iters {
        let ap = apply(&p, calls);
        let p_ap = dot(&p, &ap);
        if !p_ap.is_finite() {
            return Err(IhvpError::NumericFailure { iteration });
        }
        if p_ap <= 0.0 {
            return Ok(CgOutcome::NegativeCurvature);
        }
        let alpha = rs / p_ap;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_next = dot(&r, &r);
        if !rs_next.is_finite() {
            return Err(IhvpError::NumericFailure { iteration });
        }
        let res = rs_next.sqrt();
        if res <= cfg.tol * rhs_norm {
            return Ok(CgOutcome::Done(u, iteration + 1, res, true));
        }
        let beta = rs_next / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_next;
    }
    let res = rs.sqrt();
    Ok(CgOutcome::Done(u, cfg.max_iters, res, false))
}

/// Conjugate gradient on (H + λI)u = v (or the normal-equation form when
/// configured). Detected negative curvature bumps λ by 10x, up to three times.
pub fn solve_cg(
    oracle: &dyn HvpOracle,
    v: &[f64],
    cfg: &IhvpConfig,
) -> Result<(Vec<f64>, SolveDiagnostics), IhvpError> {
    if v.len() != oracle.dim() {
        return Err(IhvpError::DimensionMismatch {
            oracle: oracle.dim(),
            vector: v.len(),
        });
    }
    let mut calls = 0usize;
    let rhs = if cfg.normal_equations {
        calls += 1;
        oracle.apply(v)
    } else {
        v.to_vec()
    };
    let mut damping = cfg.damping;
    let mut bumps = 0usize;
    loop {
        match cg_once(oracle, &rhs, damping, cfg, &mut calls)? {
            CgOutcome::Done(u, iterations, residual, converged) => {
                let rhs_norm = norm(&rhs);
                return Ok((
                    u,
                    SolveDiagnostics {
                        iterations,
                        residual_norm: residual,
                        relative_residual: if rhs_norm > 0.0 { residual / rhs_norm } else { 0.0 },
                        converged,
                        effective_damping: damping,
                        damping_bumps: bumps,
                        oracle_calls: calls,
                        ..Default::default()
                    },
                ));
            }
            CgOutcome::NegativeCurvature => {
                if bumps >= 3 {
                    return Err(IhvpError::IndefiniteSystem { bumps });
                }
                bumps += 1;
                damping = if damping > 0.0 { damping * 10.0 } else { 1e-4 };
            }
        }
    }
}

/// Truncated stochastic Neumann recursion: repeats independent chains of
/// u ← v + u − s (H_b + λI) u and averages s·u over repeats.
pub fn solve_lissa<R: Rng + ?Sized>(
    oracle: &dyn HvpOracle,
    v: &[f64],
    cfg: &IhvpConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, SolveDiagnostics), IhvpError> {
    if v.len() != oracle.dim() {
        return Err(IhvpError::DimensionMismatch {
            oracle: oracle.dim(),
            vector: v.len(),
        });
    }
    let n = v.len();
    let mut calls = 0usize;
    let mut scale_warning = false;
    let scale = if cfg.lissa_scale > 0.0 {
        cfg.lissa_scale
    } else {
        let estimate = power_iteration_estimate(oracle, cfg.damping, 60, &mut calls);
        1.0 / (1.5 * estimate.max(1e-12))
    };
    // convergence needs s * lambda_max(H + damping I) < 2
    if n <= 512 {
        let estimate = power_iteration_estimate(oracle, cfg.damping, 60, &mut calls);
        if scale * estimate >= 2.0 {
            scale_warning = true;
        }
    }

    let v_norm = norm(v);
    let guard = 1e6 * v_norm.max(1e-300);
    let batches = oracle.num_minibatches();
    let mut acc = vec![0.0; n];
    let mut iterate_norms = Vec::new();
    for repeat in 0..cfg.lissa_repeats.max(1) {
        let mut u = v.to_vec();
        let mut norms = Vec::with_capacity(cfg.max_iters);
        for iteration in 0..cfg.max_iters {
            let batch = rng.gen_range(0..batches);
            let hu = oracle.apply_minibatch(&u, batch);
            calls += 1;
            for i in 0..n {
                u[i] = v[i] + u[i] - scale * (hu[i] + cfg.damping * u[i]);
            }
            let u_norm = norm(&u);
            if !u_norm.is_finite() {
                return Err(IhvpError::NumericFailure { iteration });
            }
            norms.push(u_norm);
            if u_norm > guard {
                return Err(IhvpError::Divergence { repeat, iteration });
            }
        }
        for i in 0..n {
            acc[i] += u[i];
        }
        iterate_norms = norms;
    }
    let repeats = cfg.lissa_repeats.max(1) as f64;
    let result: Vec<f64> = acc.iter().map(|a| scale * a / repeats).collect();

    let hv = oracle.apply(&result);
    calls += 1;
    let residual: f64 = hv
        .iter()
        .zip(v)
        .zip(&result)
        .map(|((h, vi), ui)| {
            let r = h + cfg.damping * ui - vi;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok((
        result,
        SolveDiagnostics {
            iterations: cfg.max_iters,
            residual_norm: residual,
            relative_residual: if v_norm > 0.0 { residual / v_norm } else { 0.0 },
            converged: !scale_warning,
            effective_damping: cfg.damping,
            damping_bumps: 0,
            oracle_calls: calls,
            iterate_norms,
            scale_warning,
        },
    ))
}

/// Power-iteration estimate of the top eigenvalue of H + λI.
fn power_iteration_estimate(
    oracle: &dyn HvpOracle,
    damping: f64,
    iters: usize,
    calls: &mut usize,
) -> f64 {
    let n = oracle.dim();
    // deterministic non-degenerate start vector
    let mut b: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64) * 0.7).sin()).collect();
    let mut estimate = 0.0;
    for _ in 0..iters {
        let b_norm = norm(&b);
        if b_norm == 0.0 {
            break;
        }
        for x in &mut b {
            *x /= b_norm;
        }
        let mut ab = oracle.apply(&b);
        *calls += 1;
        for (a, bi) in ab.iter_mut().zip(&b) {
            *a += damping * bi;
        }
        estimate = dot(&ab, &b).abs();
        b = ab;
    }
    estimate
}

/// Public wrapper for the spectral-radius estimate used in tests and configs.
pub fn estimate_top_eigenvalue(oracle: &dyn HvpOracle, damping: f64, iters: usize) -> f64 {
    let mut calls = 0;
    power_iteration_estimate(oracle, damping, iters, &mut calls)
}

/// Exact solve of (H + λI)u = v through a symmetric factorization.
/// Testing/oracle path for moderate dimensions.
pub fn direct_solve(h: &DenseMatrix, v: &[f64], damping: f64) -> Result<Vec<f64>, IhvpError> {
    if h.rows() != v.len() || h.rows() != h.cols() {
        return Err(IhvpError::DimensionMismatch {
            oracle: h.rows(),
            vector: v.len(),
        });
    }
    let gap = h.symmetry_gap();
    if gap > 1e-8 * h.max_abs().max(1.0) {
        return Err(IhvpError::NotSymmetric { gap });
    }
    let mut a = h.to_nalgebra();
    for i in 0..a.nrows() {
        a[(i, i)] += damping;
    }
    let rhs = nalgebra::DVector::from_column_slice(v);
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&rhs).as_slice().to_vec());
    }
    // indefinite or semi-definite: fall back to a symmetric eigensolve
    let eigen = nalgebra::SymmetricEigen::new(a);
    let max_abs = eigen
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &e| acc.max(e.abs()));
    if max_abs == 0.0 {
        return Err(IhvpError::Singular { damping });
    }
    let mut coeffs = eigen.eigenvectors.transpose() * rhs;
    for (i, c) in coeffs.iter_mut().enumerate() {
        let e = eigen.eigenvalues[i];
        if e.abs() <= 1e-12 * max_abs {
            return Err(IhvpError::Singular { damping });
        }
        *c /= e;
    }
    Ok((eigen.eigenvectors * coeffs).as_slice().to_vec())
}

/// Something that can apply (H + λI)⁻¹ to a vector.
pub trait ApplyInverse: Send + Sync {
    fn dim(&self) -> usize;
    fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>, IhvpError>;
}

/// Prefactorized dense inverse.
pub struct DenseInverse {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    dim: usize,
}

impl DenseInverse {
    pub fn factorize(h: &DenseMatrix, damping: f64) -> Result<Self, IhvpError> {
        let mut a = h.to_nalgebra();
        for i in 0..a.nrows() {
            a[(i, i)] += damping;
        }
        let chol = a.cholesky().ok_or(IhvpError::Singular { damping })?;
        Ok(Self {
            chol,
            dim: h.rows(),
        })
    }
}

impl ApplyInverse for DenseInverse {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>, IhvpError> {
        let rhs = nalgebra::DVector::from_column_slice(v);
        Ok(self.chol.solve(&rhs).as_slice().to_vec())
    }
}

/// CG-backed inverse over an oracle.
pub struct CgInverse<'a> {
    pub oracle: &'a dyn HvpOracle,
    pub cfg: IhvpConfig,
}

impl ApplyInverse for CgInverse<'_> {
    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>, IhvpError> {
        solve_cg(self.oracle, v, &self.cfg).map(|(u, _)| u)
    }
}
