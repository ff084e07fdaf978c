//! Differentiable building blocks for standardized models.
//!
//! Every stage maps a flat input to a flat output and provides the exact
//! tangent (`jvp`) and cotangent (`vjp`) maps at a linearization point. The
//! point is passed as both the stage input `x` and its forward output `y` so
//! that stages can reuse whichever is cheaper.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linop::Operator;
use crate::model::special;
use crate::model::spectrum::SpectrumModel;

pub trait Stage: Send + Sync + std::fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jvp(&self, x: &[f64], y: &[f64], dx: &[f64]) -> Vec<f64>;
    fn vjp(&self, x: &[f64], y: &[f64], dy: &[f64]) -> Vec<f64>;
}

/// A fixed linear map.
#[derive(Debug, Clone)]
pub struct Linear {
    op: Operator,
}

impl Linear {
    pub fn new(op: Operator) -> Self {
        Self { op }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }
}

impl Stage for Linear {
    fn input_dim(&self) -> usize {
        self.op.domain_dim()
    }

    fn output_dim(&self) -> usize {
        self.op.codomain_dim()
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.op.matvec(x))
    }

    fn jvp(&self, _x: &[f64], _y: &[f64], dx: &[f64]) -> Vec<f64> {
        self.op.matvec(dx)
    }

    fn vjp(&self, _x: &[f64], _y: &[f64], dy: &[f64]) -> Vec<f64> {
        self.op.rmatvec(dy)
    }
}

/// Scalar nonlinearities applied elementwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFn {
    Exp,
    /// `½(1 + tanh x)`
    TanhSigmoid,
    /// `1 / (1 + e^{−x})`
    Logistic,
    GaussianCdf,
    /// Gamma(shape, rate) quantile of `Φ(x)`.
    GammaStandardize { shape: f64, rate: f64 },
}

impl ScalarFn {
    pub fn value(self, x: f64) -> Result<f64> {
        Ok(match self {
            ScalarFn::Exp => x.exp(),
            ScalarFn::TanhSigmoid => 0.5 * (1.0 + x.tanh()),
            ScalarFn::Logistic => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            ScalarFn::GaussianCdf => special::norm_cdf(x),
            ScalarFn::GammaStandardize { shape, rate } => special::gamma_standardize(x, shape, rate)?,
        })
    }

    /// Derivative at `x`, given `y = value(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            ScalarFn::Exp => y,
            ScalarFn::TanhSigmoid => 2.0 * y * (1.0 - y),
            ScalarFn::Logistic => y * (1.0 - y),
            ScalarFn::GaussianCdf => special::norm_pdf(x),
            ScalarFn::GammaStandardize { shape, rate } => {
                special::gamma_standardize_derivative(x, y, shape, rate)
            }
        }
    }
}

/// Elementwise nonlinearity on a sub-range; other entries pass through.
#[derive(Debug, Clone)]
pub struct Pointwise {
    func: ScalarFn,
    dim: usize,
    range: Range<usize>,
}

impl Pointwise {
    pub fn full(func: ScalarFn, dim: usize) -> Self {
        Self {
            func,
            dim,
            range: 0..dim,
        }
    }

    pub fn on_range(func: ScalarFn, dim: usize, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > dim {
            return Err(Error::Config(format!("pointwise range {range:?} outside 0..{dim}")));
        }
        Ok(Self { func, dim, range })
    }
}

impl Stage for Pointwise {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        for i in self.range.clone() {
            y[i] = self.func.value(x[i])?;
        }
        Ok(y)
    }

    fn jvp(&self, x: &[f64], y: &[f64], dx: &[f64]) -> Vec<f64> {
        let mut out = dx.to_vec();
        for i in self.range.clone() {
            out[i] *= self.func.derivative(x[i], y[i]);
        }
        out
    }

    fn vjp(&self, x: &[f64], y: &[f64], dy: &[f64]) -> Vec<f64> {
        self.jvp(x, y, dy)
    }
}

/// Learned-spectrum Gaussian field.
///
/// Input layout is `[field excitations (N), slope, offset, smooth (n_tau)]`;
/// output is the N-point field `H(amp ⊙ ξ_s)` with amplitudes set by the
/// spectrum at the current hyperparameters.
#[derive(Debug, Clone)]
pub struct SpectralField {
    spectrum: Arc<SpectrumModel>,
}

impl SpectralField {
    pub fn new(spectrum: Arc<SpectrumModel>) -> Self {
        Self { spectrum }
    }

    pub fn spectrum(&self) -> &SpectrumModel {
        &self.spectrum
    }

    fn field_len(&self) -> usize {
        self.spectrum.grid().len()
    }

    fn amplitudes(&self, x: &[f64]) -> Vec<f64> {
        let n = self.field_len();
        let log_p = self
            .spectrum
            .log_spectrum(x[n], x[n + 1], &x[n + 2..])
            .expect("input length checked by the chain");
        self.spectrum.mode_amplitudes(&log_p)
    }
}

impl Stage for SpectralField {
    fn input_dim(&self) -> usize {
        self.field_len() + 2 + self.spectrum.n_tau()
    }

    fn output_dim(&self) -> usize {
        self.field_len()
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.field_len();
        let amp = self.amplitudes(x);
        let v: Vec<f64> = amp.iter().zip(&x[..n]).map(|(a, s)| a * s).collect();
        Ok(self.spectrum.grid().transform(&v))
    }

    fn jvp(&self, x: &[f64], _y: &[f64], dx: &[f64]) -> Vec<f64> {
        let n = self.field_len();
        let sm = &self.spectrum;
        let pr = sm.priors();
        let amp = self.amplitudes(x);
        let d_tau = sm.smooth_matrix() * nalgebra::DVector::from_column_slice(&dx[n + 2..]);
        let d_log_p: Vec<f64> = sm
            .log_k()
            .iter()
            .zip(d_tau.iter())
            .map(|(lk, t)| pr.slope_std * dx[n] * lk + pr.offset_std * dx[n + 1] + t)
            .collect();
        let v: Vec<f64> = (0..n)
            .map(|m| {
                let b = sm.mode_bins()[m];
                amp[m] * (dx[m] + 0.5 * x[m] * d_log_p[b])
            })
            .collect();
        sm.grid().transform(&v)
    }

    fn vjp(&self, x: &[f64], _y: &[f64], dy: &[f64]) -> Vec<f64> {
        let n = self.field_len();
        let sm = &self.spectrum;
        let pr = sm.priors();
        let amp = self.amplitudes(x);
        let u = sm.grid().transform(dy);
        let mut out = vec![0.0; self.input_dim()];
        let mut per_bin = vec![0.0; sm.n_bins()];
        for m in 0..n {
            out[m] = amp[m] * u[m];
            per_bin[sm.mode_bins()[m]] += 0.5 * amp[m] * x[m] * u[m];
        }
        out[n] = pr.slope_std * sm.log_k().iter().zip(&per_bin).map(|(l, g)| l * g).sum::<f64>();
        out[n + 1] = pr.offset_std * per_bin.iter().sum::<f64>();
        let d_tau = sm.smooth_matrix().tr_mul(&nalgebra::DVector::from_column_slice(&per_bin));
        out[n + 2..].copy_from_slice(d_tau.as_slice());
        out
    }
}

/// Multiplies a block by a transformed scalar: `x[block] ← g(x[scalar]) · x[block]`.
#[derive(Debug, Clone)]
pub struct ScaleBlock {
    dim: usize,
    block: Range<usize>,
    scalar: usize,
    func: ScalarFn,
}

impl ScaleBlock {
    pub fn new(dim: usize, block: Range<usize>, scalar: usize, func: ScalarFn) -> Result<Self> {
        if block.end > dim || scalar >= dim || block.contains(&scalar) {
            return Err(Error::Config(format!(
                "scale block {block:?} with scalar {scalar} invalid for dimension {dim}"
            )));
        }
        Ok(Self {
            dim,
            block,
            scalar,
            func,
        })
    }
}

impl Stage for ScaleBlock {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.func.value(x[self.scalar])?;
        let mut y = x.to_vec();
        for v in &mut y[self.block.clone()] {
            *v *= g;
        }
        Ok(y)
    }

    fn jvp(&self, x: &[f64], _y: &[f64], dx: &[f64]) -> Vec<f64> {
        let s = x[self.scalar];
        let g = self.func.value(s).expect("forward succeeded at this point");
        let dg = self.func.derivative(s, g) * dx[self.scalar];
        let mut out = dx.to_vec();
        for i in self.block.clone() {
            out[i] = g * dx[i] + dg * x[i];
        }
        out
    }

    fn vjp(&self, x: &[f64], _y: &[f64], dy: &[f64]) -> Vec<f64> {
        let s = x[self.scalar];
        let g = self.func.value(s).expect("forward succeeded at this point");
        let mut out = dy.to_vec();
        let mut acc = 0.0;
        for i in self.block.clone() {
            out[i] = g * dy[i];
            acc += x[i] * dy[i];
        }
        out[self.scalar] += self.func.derivative(s, g) * acc;
        out
    }
}

/// Matrix product `Y = M C` of two row-major operands stored back to back.
#[derive(Debug, Clone)]
pub struct MatrixProduct {
    rows: usize,
    inner: usize,
    cols: usize,
}

impl MatrixProduct {
    pub fn new(rows: usize, inner: usize, cols: usize) -> Result<Self> {
        if rows == 0 || inner == 0 || cols == 0 {
            return Err(Error::Config("matrix product needs positive sizes".into()));
        }
        Ok(Self { rows, inner, cols })
    }

    fn split(&self, x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.rows * self.inner;
        (
            DMatrix::from_row_slice(self.rows, self.inner, &x[..k]),
            DMatrix::from_row_slice(self.inner, self.cols, &x[k..]),
        )
    }

    fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
        m.transpose().as_slice().to_vec()
    }
}

impl Stage for MatrixProduct {
    fn input_dim(&self) -> usize {
        self.rows * self.inner + self.inner * self.cols
    }

    fn output_dim(&self) -> usize {
        self.rows * self.cols
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (m, c) = self.split(x);
        Ok(Self::row_major(&(m * c)))
    }

    fn jvp(&self, x: &[f64], _y: &[f64], dx: &[f64]) -> Vec<f64> {
        let (m, c) = self.split(x);
        let (dm, dc) = self.split(dx);
        Self::row_major(&(dm * &c + &m * dc))
    }

    fn vjp(&self, x: &[f64], _y: &[f64], dy: &[f64]) -> Vec<f64> {
        let (m, c) = self.split(x);
        let g = DMatrix::from_row_slice(self.rows, self.cols, dy);
        let mut out = Self::row_major(&(&g * c.transpose()));
        out.extend(Self::row_major(&(m.transpose() * g)));
        out
    }
}
