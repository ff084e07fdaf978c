//! Matrix-free linear operators.
//!
//! Every operator is an immutable value that knows how to apply itself and its
//! adjoint to a vector. Operators are shared behind [`Operator`] (an `Arc`) and
//! combined by composition, sums and scaling without ever forming a matrix.
//! [`to_dense`] exists for small-instance checks only and refuses to build
//! anything above a configurable column cap.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::vector;

pub type Operator = Arc<dyn LinearOperator>;

/// Default column cap for [`to_dense`]; `MGVI_DENSE_CAP` overrides it.
pub const DEFAULT_DENSE_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    Diagonal,
    Composition,
    Sum,
    Scaled,
    Dense,
    ModelJacobian,
    SandwichMetric,
    External,
}

pub trait LinearOperator: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn codomain_dim(&self) -> usize;
    fn kind(&self) -> OperatorKind;

    /// Forward application; `x.len() == domain_dim()` is guaranteed by the caller.
    fn matvec(&self, x: &[f64]) -> Vec<f64>;
    /// Adjoint application; `y.len() == codomain_dim()` is guaranteed by the caller.
    fn rmatvec(&self, y: &[f64]) -> Vec<f64>;

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator apply", self.domain_dim(), x.len())?;
        Ok(self.matvec(x))
    }

    fn adjoint_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("operator adjoint", self.codomain_dim(), y.len())?;
        Ok(self.rmatvec(y))
    }
}

impl fmt::Debug for dyn LinearOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}({} -> {})",
            self.kind(),
            self.domain_dim(),
            self.codomain_dim()
        )
    }
}

#[derive(Debug, Clone)]
pub struct Identity {
    dim: usize,
}

impl LinearOperator for Identity {
    fn domain_dim(&self) -> usize {
        self.dim
    }
    fn codomain_dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Identity
    }
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct Diagonal {
    diag: Vec<f64>,
}

impl Diagonal {
    pub fn values(&self) -> &[f64] {
        &self.diag
    }
}

impl LinearOperator for Diagonal {
    fn domain_dim(&self) -> usize {
        self.diag.len()
    }
    fn codomain_dim(&self) -> usize {
        self.diag.len()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Diagonal
    }
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.diag).map(|(a, d)| a * d).collect()
    }
    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        self.matvec(y)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    matrix: DMatrix<f64>,
}

impl Dense {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for Dense {
    fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn codomain_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Dense
    }
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let (rows, cols) = self.matrix.shape();
        let mut out = vec![0.0; rows];
        for j in 0..cols {
            let xj = x[j];
            if xj != 0.0 {
                for (o, a) in out.iter_mut().zip(self.matrix.column(j).iter()) {
                    *o += a * xj;
                }
            }
        }
        out
    }
    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        (0..self.matrix.ncols())
            .map(|j| vector::dot(self.matrix.column(j).as_slice(), y))
            .collect()
    }
}

/// `outer ∘ inner`
pub struct Composition {
    outer: Operator,
    inner: Operator,
}

impl LinearOperator for Composition {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.outer.codomain_dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Composition
    }
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.outer.matvec(&self.inner.matvec(x))
    }
    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        self.inner.rmatvec(&self.outer.rmatvec(y))
    }
}

/// Sum of equally shaped operators. Terms are applied concurrently and reduced in
/// declaration order, so results do not depend on the worker count.
pub struct Sum {
    terms: Vec<Operator>,
}

impl Sum {
    fn reduce(&self, parts: Vec<Vec<f64>>, dim: usize) -> Vec<f64> {
        vector::sum_in_order(dim, parts.iter())
    }
}

impl LinearOperator for Sum {
    fn domain_dim(&self) -> usize {
        self.terms[0].domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.terms[0].codomain_dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Sum
    }
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = self.terms.par_iter().map(|t| t.matvec(x)).collect();
        self.reduce(parts, self.codomain_dim())
    }
    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = self.terms.par_iter().map(|t| t.rmatvec(y)).collect();
        self.reduce(parts, self.domain_dim())
    }
}

pub struct Scaled {
    factor: f64,
    op: Operator,
}

impl LinearOperator for Scaled {
    fn domain_dim(&self) -> usize {
        self.op.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.op.codomain_dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Scaled
    }
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.op.matvec(x);
        out.iter_mut().for_each(|v| *v *= self.factor);
        out
    }
    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.op.rmatvec(y);
        out.iter_mut().for_each(|v| *v *= self.factor);
        out
    }
}

/// `v ↦ J†(M(J v)) + v`
pub struct SandwichMetric {
    jacobian: Operator,
    metric: Operator,
}

impl SandwichMetric {
    pub fn jacobian(&self) -> &Operator {
        &self.jacobian
    }
    pub fn metric(&self) -> &Operator {
        &self.metric
    }
}

impl LinearOperator for SandwichMetric {
    fn domain_dim(&self) -> usize {
        self.jacobian.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.jacobian.domain_dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::SandwichMetric
    }
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let jx = self.jacobian.matvec(x);
        let mjx = self.metric.matvec(&jx);
        let mut out = self.jacobian.rmatvec(&mjx);
        vector::axpy(1.0, x, &mut out);
        out
    }
    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        self.matvec(y)
    }
}

type ApplyFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Operator backed by caller-supplied forward and adjoint routines.
pub struct External {
    domain: usize,
    codomain: usize,
    forward: Box<ApplyFn>,
    adjoint: Box<ApplyFn>,
}

impl LinearOperator for External {
    fn domain_dim(&self) -> usize {
        self.domain
    }
    fn codomain_dim(&self) -> usize {
        self.codomain
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::External
    }
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (self.forward)(x)
    }
    fn rmatvec(&self, y: &[f64]) -> Vec<f64> {
        (self.adjoint)(y)
    }
}

fn positive(dim: usize, what: &str) -> Result<usize> {
    if dim == 0 {
        Err(Error::Config(format!("{what} needs a positive dimension")))
    } else {
        Ok(dim)
    }
}

pub fn identity(dim: usize) -> Result<Operator> {
    Ok(Arc::new(Identity {
        dim: positive(dim, "identity")?,
    }))
}

pub fn diagonal(diag: Vec<f64>) -> Result<Operator> {
    positive(diag.len(), "diagonal")?;
    Ok(Arc::new(Diagonal { diag }))
}

pub fn dense(matrix: DMatrix<f64>) -> Result<Operator> {
    positive(matrix.nrows(), "dense rows")?;
    positive(matrix.ncols(), "dense columns")?;
    Ok(Arc::new(Dense { matrix }))
}

pub fn zero(codomain: usize, domain: usize) -> Result<Operator> {
    dense(DMatrix::zeros(codomain, domain))
}

/// `outer ∘ inner`; requires `outer.domain_dim == inner.codomain_dim`.
pub fn compose(outer: Operator, inner: Operator) -> Result<Operator> {
    check_len("composition", outer.domain_dim(), inner.codomain_dim())?;
    Ok(Arc::new(Composition { outer, inner }))
}

pub fn sum(terms: Vec<Operator>) -> Result<Operator> {
    let first = terms
        .first()
        .ok_or_else(|| Error::Config("sum of zero operators".into()))?;
    let (d, c) = (first.domain_dim(), first.codomain_dim());
    for t in &terms {
        check_len("sum domain", d, t.domain_dim())?;
        check_len("sum codomain", c, t.codomain_dim())?;
    }
    Ok(Arc::new(Sum { terms }))
}

pub fn scale(factor: f64, op: Operator) -> Operator {
    Arc::new(Scaled { factor, op })
}

/// `J† M J + 𝟙`. `metric` must be self-adjoint positive semi-definite on the
/// codomain of `jacobian`; the result is then strictly positive definite.
pub fn sandwich_metric(jacobian: Operator, metric: Operator) -> Result<Operator> {
    check_len("sandwich metric", jacobian.codomain_dim(), metric.domain_dim())?;
    check_len("sandwich metric", metric.domain_dim(), metric.codomain_dim())?;
    Ok(Arc::new(SandwichMetric { jacobian, metric }))
}

pub fn external<F, G>(domain: usize, codomain: usize, forward: F, adjoint: G) -> Result<Operator>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
{
    Ok(Arc::new(External {
        domain: positive(domain, "external domain")?,
        codomain: positive(codomain, "external codomain")?,
        forward: Box::new(forward),
        adjoint: Box::new(adjoint),
    }))
}

/// Dense cap honouring the `MGVI_DENSE_CAP` environment variable.
pub fn dense_cap() -> usize {
    std::env::var("MGVI_DENSE_CAP")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&v: &usize| v > 0)
        .unwrap_or(DEFAULT_DENSE_CAP)
}

/// Materializes `op` column by column. Refuses when `op.domain_dim() > max_dim`.
pub fn to_dense(op: &dyn LinearOperator, max_dim: usize) -> Result<DMatrix<f64>> {
    let n = op.domain_dim();
    if n > max_dim {
        return Err(Error::DenseCapExceeded { dim: n, cap: max_dim });
    }
    let m = op.codomain_dim();
    let mut out = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.matvec(&e);
        out.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(out)
}

/// Relative adjoint mismatch `|⟨x, A y⟩ − ⟨A† x, y⟩| / (‖x‖‖A y‖ + ‖A† x‖‖y‖)`.
pub fn adjoint_mismatch(op: &dyn LinearOperator, x: &[f64], y: &[f64]) -> Result<f64> {
    let ay = op.apply(y)?;
    let atx = op.adjoint_apply(x)?;
    let lhs = vector::dot(x, &ay);
    let rhs = vector::dot(&atx, y);
    let scale = vector::norm(x) * vector::norm(&ay) + vector::norm(&atx) * vector::norm(y);
    Ok(if scale == 0.0 {
        (lhs - rhs).abs()
    } else {
        (lhs - rhs).abs() / scale
    })
}
