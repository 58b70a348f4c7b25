//! Dense vector/matrix kernels and gradient / Hessian-vector-product oracles.
//!
//! Everything downstream (solvers, scores, goal gradients) operates on a flat
//! parameter view; named blocks exist only so models can address their own
//! slices. All operations here are pure and values are immutable after
//! construction, so they are safe to share across threads.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Default cap on the parameter dimension for dense Hessian materialization.
pub const DEFAULT_DENSE_CAP: usize = 2_000;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("non-finite loss value on example {index}")]
    NonFiniteLoss { index: usize },
    #[error("non-finite gradient entry on example {index}")]
    NonFiniteGradient { index: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("layout mismatch: expected {expected} entries, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("parameter dimension {dim} exceeds dense cap {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },
    #[error("non-finite parameter entry at index {index}")]
    NonFiniteParameter { index: usize },
}

/// Named parameter blocks laid out contiguously in a flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<(String, usize)>,
    total: usize,
}

impl ParamLayout {
    pub fn new(blocks: Vec<(String, usize)>) -> Self {
        let total = blocks.iter().map(|(_, n)| n).sum();
        Self { blocks, total }
    }

    /// Single anonymous block covering the whole vector.
    pub fn flat(len: usize) -> Self {
        Self::new(vec![("theta".to_string(), len)])
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[(String, usize)] {
        &self.blocks
    }

    /// Index range of a named block, if present.
    pub fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for (block, len) in &self.blocks {
            if block == name {
                return Some(offset..offset + len);
            }
            offset += len;
        }
        None
    }
}

/// Flat model parameters with a named block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: Arc<ParamLayout>) -> Result<Self, DiffError> {
        if values.len() != layout.total_len() {
            return Err(DiffError::LayoutMismatch {
                expected: layout.total_len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(DiffError::NonFiniteParameter { index });
        }
        Ok(Self { values, layout })
    }

    /// Vector with a single anonymous block.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Arc::new(ParamLayout::flat(values.len()));
        Self { values, layout }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    /// Wraps raw values in the layout of `self` without re-validating finiteness.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .block_range(name)
            .map(|range| &self.values[range])
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layout == other.layout || self.layout.total_len() == other.layout.total_len()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.with_values(self.values.iter().map(|v| v * factor).collect())
    }

    /// self + factor * other
    pub fn axpy(&self, factor: f64, other: &Self) -> Self {
        debug_assert_eq!(self.len(), other.len());
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + factor * b)
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] += value;
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            out[i] = dot(&self.data[i * self.cols..(i + 1) * self.cols], v);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// rank-one update: self += factor * x xᵀ
    pub fn add_outer(&mut self, factor: f64, x: &[f64]) {
        assert_eq!(self.rows, x.len());
        assert_eq!(self.cols, x.len());
        for i in 0..self.rows {
            let fi = factor * x[i];
            for j in 0..self.cols {
                self.data[i * self.cols + j] += fi * x[j];
            }
        }
    }

    pub fn add_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += value;
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// max |A - Aᵀ| over all entries.
    pub fn symmetry_gap(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut gap: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                gap = gap.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        gap
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Symmetric within `1e-10 * max|A|` (vacuously true for the zero matrix).
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.symmetry_gap() <= 1e-10 * self.max_abs().max(1e-300)
    }

    /// Replaces A by (A + Aᵀ)/2.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, avg);
                self.set(j, i, avg);
            }
        }
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, m[(i, j)]);
            }
        }
        out
    }
}

impl fmt::Display for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            for j in 0..self.cols {
                write!(f, "{:>12.6} ", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// A feature/label pair. Binary labels are stored as 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Example {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// Which curvature matrix second-order operations use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianKind {
    /// The exact Hessian of the loss.
    #[default]
    Exact,
    /// The generalized Gauss-Newton matrix (drops the residual-weighted
    /// curvature of the model itself; always PSD for the shipped losses).
    GaussNewton,
}

/// A per-example differentiable loss over flat parameters.
///
/// `hvp_example` defaults to a central difference of the analytic gradient in
/// the direction `v`; shipped losses override it with an exact product.
pub trait LossFunction: Send + Sync {
    fn param_layout(&self) -> Arc<ParamLayout>;

    fn evaluate(&self, params: &ParameterVector, example: &Example) -> f64;

    fn gradient(&self, params: &ParameterVector, example: &Example) -> ParameterVector;

    fn hvp_example(
        &self,
        params: &ParameterVector,
        example: &Example,
        direction: &ParameterVector,
    ) -> ParameterVector {
        central_difference_hvp(self, params, example, direction)
    }

    /// Generalized Gauss-Newton product; defaults to the exact Hessian product.
    fn ggn_vp_example(
        &self,
        params: &ParameterVector,
        example: &Example,
        direction: &ParameterVector,
    ) -> ParameterVector {
        self.hvp_example(params, example, direction)
    }
}

/// Directional derivative of the analytic gradient, central difference with
/// step h = 1e-4 (1 + |params|) / (1 + |v|).
pub fn central_difference_hvp<L: LossFunction + ?Sized>(
    loss: &L,
    params: &ParameterVector,
    example: &Example,
    direction: &ParameterVector,
) -> ParameterVector {
    let v_norm = direction.norm();
    if v_norm == 0.0 {
        return params.zeros_like();
    }
    let h = 1e-4 * (1.0 + params.norm()) / (1.0 + v_norm);
    let plus = loss.gradient(&params.axpy(h, direction), example);
    let minus = loss.gradient(&params.axpy(-h, direction), example);
    plus.sub(&minus).scale(1.0 / (2.0 * h))
}

/// Mean gradient of `loss` over `batch`.
pub fn batch_gradient<L: LossFunction + ?Sized>(
    loss: &L,
    params: &ParameterVector,
    batch: &[Example],
) -> Result<ParameterVector, DiffError> {
    if batch.is_empty() {
        return Err(DiffError::EmptyBatch);
    }
    let mut acc = params.zeros_like();
    for (index, example) in batch.iter().enumerate() {
        if !loss.evaluate(params, example).is_finite() {
            return Err(DiffError::NonFiniteLoss { index });
        }
        let g = loss.gradient(params, example);
        if !g.is_finite() {
            return Err(DiffError::NonFiniteGradient { index });
        }
        acc = acc.add(&g);
    }
    Ok(acc.scale(1.0 / batch.len() as f64))
}

/// Empirical-Hessian-vector product H v averaged over `batch`.
pub fn hvp<L: LossFunction + ?Sized>(
    loss: &L,
    params: &ParameterVector,
    batch: &[Example],
    direction: &ParameterVector,
) -> Result<ParameterVector, DiffError> {
    hvp_with(loss, params, batch, direction, HessianKind::Exact)
}

pub fn hvp_with<L: LossFunction + ?Sized>(
    loss: &L,
    params: &ParameterVector,
    batch: &[Example],
    direction: &ParameterVector,
    kind: HessianKind,
) -> Result<ParameterVector, DiffError> {
    if batch.is_empty() {
        return Err(DiffError::EmptyBatch);
    }
    if direction.len() != params.len() {
        return Err(DiffError::LayoutMismatch {
            expected: params.len(),
            got: direction.len(),
        });
    }
    let mut acc = params.zeros_like();
    for example in batch {
        let product = match kind {
            HessianKind::Exact => loss.hvp_example(params, example, direction),
            HessianKind::GaussNewton => loss.ggn_vp_example(params, example, direction),
        };
        acc = acc.add(&product);
    }
    Ok(acc.scale(1.0 / batch.len() as f64))
}

/// Materializes the empirical Hessian column by column. Testing/oracle path;
/// refuses dimensions above `DEFAULT_DENSE_CAP`.
pub fn dense_hessian<L: LossFunction + ?Sized>(
    loss: &L,
    params: &ParameterVector,
    batch: &[Example],
) -> Result<DenseMatrix, DiffError> {
    dense_hessian_with(loss, params, batch, HessianKind::Exact, DEFAULT_DENSE_CAP)
}

pub fn dense_hessian_with<L: LossFunction + ?Sized>(
    loss: &L,
    params: &ParameterVector,
    batch: &[Example],
    kind: HessianKind,
    cap: usize,
) -> Result<DenseMatrix, DiffError> {
    if batch.is_empty() {
        return Err(DiffError::EmptyBatch);
    }
    let dim = params.len();
    if dim > cap {
        return Err(DiffError::DenseCapExceeded { dim, cap });
    }
    let mut h = DenseMatrix::zeros(dim, dim);
    let mut unit = params.zeros_like();
    for j in 0..dim {
        unit.as_mut_slice()[j] = 1.0;
        let column = hvp_with(loss, params, batch, &unit, kind)?;
        for i in 0..dim {
            h.set(i, j, column.as_slice()[i]);
        }
        unit.as_mut_slice()[j] = 0.0;
    }
    h.symmetrize();
    Ok(h)
}

/// ½ θᵀ diag(a) θ, independent of the example. Exact second-order products.
/// Used as a reference loss in tests and benchmarks.
#[derive(Debug, Clone)]
pub struct DiagQuadraticLoss {
    pub diag: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl DiagQuadraticLoss {
    pub fn new(diag: Vec<f64>) -> Self {
        let layout = Arc::new(ParamLayout::flat(diag.len()));
        Self { diag, layout }
    }

    pub fn isotropic(dim: usize) -> Self {
        Self::new(vec![1.0; dim])
    }
}

impl LossFunction for DiagQuadraticLoss {
    fn param_layout(&self) -> Arc<ParamLayout> {
        Arc::clone(&self.layout)
    }

    fn evaluate(&self, params: &ParameterVector, _example: &Example) -> f64 {
        0.5 * params
            .as_slice()
            .iter()
            .zip(&self.diag)
            .map(|(t, a)| a * t * t)
            .sum::<f64>()
    }

    fn gradient(&self, params: &ParameterVector, _example: &Example) -> ParameterVector {
        params.with_values(
            params
                .as_slice()
                .iter()
                .zip(&self.diag)
                .map(|(t, a)| a * t)
                .collect(),
        )
    }

    fn hvp_example(
        &self,
        params: &ParameterVector,
        _example: &Example,
        direction: &ParameterVector,
    ) -> ParameterVector {
        params.with_values(
            direction
                .as_slice()
                .iter()
                .zip(&self.diag)
                .map(|(v, a)| a * v)
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy() -> Example {
        Example::new(vec![0.0], 0.0)
    }

    #[test]
    fn quadratic_gradient_is_identity_map() {
        let loss = DiagQuadraticLoss::isotropic(2);
        let theta = ParameterVector::flat(vec![1.0, 2.0]);
        let g = batch_gradient(&loss, &theta, &[dummy()]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn quadratic_gradient_vanishes_at_origin() {
        let loss = DiagQuadraticLoss::isotropic(2);
        let theta = ParameterVector::flat(vec![0.0, 0.0]);
        let g = batch_gradient(&loss, &theta, &[dummy()]).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn quadratic_hvp_applies_diagonal() {
        let loss = DiagQuadraticLoss::new(vec![2.0, 4.0]);
        let theta = ParameterVector::flat(vec![0.3, -0.7]);
        let v = ParameterVector::flat(vec![1.0, 1.0]);
        let hv = hvp(&loss, &theta, &[dummy()], &v).unwrap();
        assert_eq!(hv.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn hvp_of_zero_vector_is_zero() {
        let loss = DiagQuadraticLoss::new(vec![2.0, 4.0]);
        let theta = ParameterVector::flat(vec![0.3, -0.7]);
        let v = ParameterVector::flat(vec![0.0, 0.0]);
        let hv = hvp(&loss, &theta, &[dummy()], &v).unwrap();
        assert_eq!(hv.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn hvp_rejects_mismatched_layout() {
        let loss = DiagQuadraticLoss::new(vec![2.0, 4.0]);
        let theta = ParameterVector::flat(vec![0.3, -0.7]);
        let v = ParameterVector::flat(vec![1.0]);
        assert!(matches!(
            hvp(&loss, &theta, &[dummy()], &v),
            Err(DiffError::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn dense_hessian_of_quadratic() {
        let loss = DiagQuadraticLoss::new(vec![2.0, 4.0]);
        let theta = ParameterVector::flat(vec![0.0, 0.0]);
        let h = dense_hessian(&loss, &theta, &[dummy()]).unwrap();
        assert_eq!(h.get(0, 0), 2.0);
        assert_eq!(h.get(1, 1), 4.0);
        assert_eq!(h.get(0, 1), 0.0);
    }

    #[test]
    fn dense_hessian_rejects_empty_batch() {
        let loss = DiagQuadraticLoss::new(vec![2.0]);
        let theta = ParameterVector::flat(vec![0.0]);
        assert!(matches!(
            dense_hessian(&loss, &theta, &[]),
            Err(DiffError::EmptyBatch)
        ));
    }

    #[test]
    fn dense_cap_enforced() {
        let loss = DiagQuadraticLoss::isotropic(3);
        let theta = ParameterVector::flat(vec![0.0; 3]);
        assert!(matches!(
            dense_hessian_with(&loss, &theta, &[dummy()], HessianKind::Exact, 2),
            Err(DiffError::DenseCapExceeded { dim: 3, cap: 2 })
        ));
    }

    #[test]
    fn layout_block_ranges() {
        let layout = ParamLayout::new(vec![("w".into(), 3), ("b".into(), 1)]);
        assert_eq!(layout.total_len(), 4);
        assert_eq!(layout.block_range("w"), Some(0..3));
        assert_eq!(layout.block_range("b"), Some(3..4));
        assert_eq!(layout.block_range("missing"), None);
    }

    #[test]
    fn parameter_vector_rejects_non_finite() {
        let layout = Arc::new(ParamLayout::flat(2));
        assert!(ParameterVector::new(vec![1.0, f64::NAN], layout).is_err());
    }

    #[test]
    fn matrix_symmetry_gap() {
        let mut m = DenseMatrix::zeros(2, 2);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0 + 1e-6);
        assert!((m.symmetry_gap() - 1e-6).abs() < 1e-12);
        m.symmetrize();
        assert!(m.symmetry_gap() == 0.0);
    }
}
