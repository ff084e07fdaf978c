//! Isotropic power spectra on harmonic grids: fixed kernels and the learned
//! power-law-plus-smooth-deviation model.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linop::{self, Operator};
use crate::model::harmonic::{frequency, HarmonicGrid, Hartley};

/// Per-mode amplitudes `√(N p(|k|) / V)` for a fixed spectrum on a unit-volume grid.
pub fn fixed_amplitudes(grid: &HarmonicGrid, spectrum: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = grid.len() as f64;
    grid.mode_magnitudes()
        .into_iter()
        .map(|k| (n * spectrum(k)).sqrt())
        .collect()
}

/// Amplitude operator `ξ ↦ H diag(amplitudes) ξ`.
pub fn amplitude_operator(grid: &HarmonicGrid, amplitudes: Vec<f64>) -> Result<Operator> {
    check_len("amplitude operator", grid.len(), amplitudes.len())?;
    linop::compose(
        std::sync::Arc::new(Hartley::new(grid.clone())),
        linop::diagonal(amplitudes)?,
    )
}

/// Squared-exponential kernel spectrum `√(2π) σ² l exp(−2π l² k²)`.
pub fn squared_exponential(sigma: f64, length: f64) -> impl Fn(f64) -> f64 {
    move |k| (2.0 * std::f64::consts::PI).sqrt() * sigma * sigma * length
        * (-2.0 * std::f64::consts::PI * length * length * k * k).exp()
}

/// Hyperparameters of the learned spectrum `ln p = a ln k + b + τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumPriors {
    pub slope_mean: f64,
    pub slope_std: f64,
    pub offset_mean: f64,
    pub offset_std: f64,
    pub n_tau: usize,
    pub smooth_amplitude: f64,
}

impl Default for SpectrumPriors {
    fn default() -> Self {
        Self {
            slope_mean: -3.0,
            slope_std: 0.5,
            offset_mean: 0.0,
            offset_std: 1.0,
            n_tau: 64,
            smooth_amplitude: 0.25,
        }
    }
}

/// Binned spectrum model on a harmonic grid.
///
/// Modes go to bin `max(round|k|, 1) − 1`, so the zero mode shares the lowest
/// nonzero bin. Bin `j` sits at `ln k = ln(j + 1)`.
#[derive(Debug, Clone)]
pub struct SpectrumModel {
    grid: HarmonicGrid,
    mode_bin: Vec<usize>,
    log_k: Vec<f64>,
    smooth: DMatrix<f64>,
    priors: SpectrumPriors,
}

impl SpectrumModel {
    pub fn new(grid: HarmonicGrid, priors: SpectrumPriors) -> Result<Self> {
        let bad = |what: &str| Err(Error::Config(format!("spectrum prior {what} must be positive")));
        if !(priors.slope_std > 0.0) {
            return bad("slope_std");
        }
        if !(priors.offset_std > 0.0) {
            return bad("offset_std");
        }
        if !(priors.smooth_amplitude >= 0.0) {
            return Err(Error::Config("spectrum smooth_amplitude must be non-negative".into()));
        }
        if priors.n_tau < 2 {
            return Err(Error::Config("spectrum needs at least two smooth-component parameters".into()));
        }
        let mode_bin: Vec<usize> = grid
            .mode_magnitudes()
            .into_iter()
            .map(|k| (k.round() as usize).max(1) - 1)
            .collect();
        let n_bins = mode_bin.iter().max().map_or(1, |&b| b + 1);
        let log_k: Vec<f64> = (0..n_bins).map(|j| ((j + 1) as f64).ln()).collect();
        let smooth = smooth_component(&log_k, priors.n_tau, priors.smooth_amplitude);
        Ok(Self {
            grid,
            mode_bin,
            log_k,
            smooth,
            priors,
        })
    }

    pub fn grid(&self) -> &HarmonicGrid {
        &self.grid
    }

    pub fn priors(&self) -> &SpectrumPriors {
        &self.priors
    }

    pub fn n_bins(&self) -> usize {
        self.log_k.len()
    }

    pub fn n_tau(&self) -> usize {
        self.priors.n_tau
    }

    pub fn mode_bins(&self) -> &[usize] {
        &self.mode_bin
    }

    pub fn log_k(&self) -> &[f64] {
        &self.log_k
    }

    /// Dense map from smooth-component parameters to per-bin deviations.
    pub fn smooth_matrix(&self) -> &DMatrix<f64> {
        &self.smooth
    }

    pub fn smooth_operator(&self) -> Result<Operator> {
        linop::dense(self.smooth.clone())
    }

    pub fn slope(&self, xi_a: f64) -> f64 {
        self.priors.slope_mean + self.priors.slope_std * xi_a
    }

    pub fn offset(&self, xi_b: f64) -> f64 {
        self.priors.offset_mean + self.priors.offset_std * xi_b
    }

    /// `ln p` per bin.
    pub fn log_spectrum(&self, xi_a: f64, xi_b: f64, xi_tau: &[f64]) -> Result<Vec<f64>> {
        check_len("spectrum smooth component", self.n_tau(), xi_tau.len())?;
        let tau = &self.smooth * nalgebra::DVector::from_column_slice(xi_tau);
        let (a, b) = (self.slope(xi_a), self.offset(xi_b));
        Ok(self
            .log_k
            .iter()
            .zip(tau.iter())
            .map(|(lk, t)| a * lk + b + t)
            .collect())
    }

    /// Per-mode amplitudes `√(N/V) exp(ln p_bin / 2)` on a unit-volume grid.
    pub fn mode_amplitudes(&self, log_spectrum: &[f64]) -> Vec<f64> {
        let scale = (self.grid.len() as f64).sqrt();
        self.mode_bin
            .iter()
            .map(|&b| scale * (0.5 * log_spectrum[b]).exp())
            .collect()
    }

    /// Amplitude operator for the spectrum at the given hyperparameters.
    pub fn build_spectrum_operator(&self, xi_a: f64, xi_b: f64, xi_tau: &[f64]) -> Result<Operator> {
        let log_p = self.log_spectrum(xi_a, xi_b, xi_tau)?;
        amplitude_operator(&self.grid, self.mode_amplitudes(&log_p))
    }
}

/// Interpolated, standardized smooth component on the `ln k` axis.
///
/// The parameters live on a periodic grid twice as long as the occupied
/// `ln k` range, are coloured with a `|q|⁻⁴` spectrum, and are linearly
/// interpolated to the bin positions. The pointwise standard deviation on the
/// periodic grid equals `amplitude`.
fn smooth_component(log_k: &[f64], n_tau: usize, amplitude: f64) -> DMatrix<f64> {
    let t_max = log_k.last().copied().unwrap_or(0.0).max(1.0);
    let spacing = 2.0 * t_max / n_tau as f64;

    let weights: Vec<f64> = (0..n_tau)
        .map(|i| (frequency(i, n_tau).unsigned_abs().max(1) as f64).powi(-4))
        .collect();
    let total: f64 = weights.iter().sum();
    let c = amplitude * (n_tau as f64 / total).sqrt();
    let amps: Vec<f64> = weights.iter().map(|w| c * w.sqrt()).collect();

    let norm = 1.0 / (n_tau as f64).sqrt();
    let coloured = DMatrix::from_fn(n_tau, n_tau, |i, q| {
        let t = 2.0 * std::f64::consts::PI * (i * q) as f64 / n_tau as f64;
        (t.cos() + t.sin()) * norm * amps[q]
    });

    let mut interp = DMatrix::<f64>::zeros(log_k.len(), n_tau);
    for (j, &t) in log_k.iter().enumerate() {
        let pos = t / spacing;
        let i0 = pos.floor() as usize;
        let w = pos - i0 as f64;
        interp[(j, i0 % n_tau)] += 1.0 - w;
        interp[(j, (i0 + 1) % n_tau)] += w;
    }
    interp * coloured
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::to_dense;
    use std::f64::consts::PI;

    #[test]
    fn flat_spectrum_is_unitary() {
        let grid = HarmonicGrid::new(&[16]).unwrap();
        let amps = fixed_amplitudes(&grid, |_| 1.0 / 16.0);
        assert!(amps.iter().all(|a| (a - 1.0).abs() < 1e-15));
        let op = amplitude_operator(&grid, amps).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64).sin() + 0.1 * i as f64).collect();
        let back = op.adjoint_apply(&op.apply(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn squared_exponential_covariance_matches_dense_oracle() {
        let n = 32;
        let grid = HarmonicGrid::new(&[n]).unwrap();
        let p = squared_exponential(1.0, 1.0);
        let op = amplitude_operator(&grid, fixed_amplitudes(&grid, &p)).unwrap();
        let a = to_dense(op.as_ref(), 64).unwrap();
        let cov = &a * a.transpose();
        // S_jl = Σ_k p(k) cos(2π k (j − l) / N) over signed frequencies, V = 1.
        let oracle = DMatrix::from_fn(n, n, |j, l| {
            (0..n)
                .map(|i| {
                    let k = frequency(i, n) as f64;
                    p(k.abs()) * (2.0 * PI * k * (j as f64 - l as f64) / n as f64).cos()
                })
                .sum::<f64>()
        });
        assert!((&cov - &oracle).amax() < 1e-12);
        let expected: f64 = (0..n).map(|i| p(frequency(i, n).unsigned_abs() as f64)).sum();
        for j in 0..n {
            assert!((cov[(j, j)] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn power_law_slope_without_smooth_part() {
        let grid = HarmonicGrid::new(&[16, 16]).unwrap();
        let sm = SpectrumModel::new(grid, SpectrumPriors::default()).unwrap();
        let pr = sm.priors();
        let xi_a = (-2.0 - pr.slope_mean) / pr.slope_std;
        let xi_b = -pr.offset_mean / pr.offset_std;
        let log_p = sm.log_spectrum(xi_a, xi_b, &vec![0.0; sm.n_tau()]).unwrap();
        for (lp, lk) in log_p.iter().zip(sm.log_k()) {
            assert!((lp + 2.0 * lk).abs() < 1e-14);
        }
        for w in log_p.windows(2).zip(sm.log_k().windows(2)) {
            let slope = (w.0[1] - w.0[0]) / (w.1[1] - w.1[0]);
            assert!((slope + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn every_mode_has_one_bin_and_positive_amplitude() {
        let grid = HarmonicGrid::new(&[8, 8]).unwrap();
        let sm = SpectrumModel::new(grid, SpectrumPriors::default()).unwrap();
        assert_eq!(sm.mode_bins().len(), 64);
        assert!(sm.mode_bins().iter().all(|&b| b < sm.n_bins()));
        assert_eq!(sm.mode_bins()[0], sm.mode_bins()[1]);
        let tau: Vec<f64> = (0..sm.n_tau()).map(|i| (i as f64 * 0.7).cos() * 3.0).collect();
        let amps = sm.mode_amplitudes(&sm.log_spectrum(1.5, -2.0, &tau).unwrap());
        assert!(amps.iter().all(|&a| a > 0.0 && a.is_finite()));
    }

    #[test]
    fn smooth_component_has_requested_scale() {
        let grid = HarmonicGrid::new(&[32, 32]).unwrap();
        let priors = SpectrumPriors {
            smooth_amplitude: 0.25,
            ..SpectrumPriors::default()
        };
        let sm = SpectrumModel::new(grid, priors).unwrap();
        let t = sm.smooth_matrix();
        // Row variances are interpolations of a stationary variance 0.25²,
        // so they lie at or below it.
        for j in 0..t.nrows() {
            let var: f64 = t.row(j).iter().map(|v| v * v).sum();
            assert!(var <= 0.0625 + 1e-12 && var > 0.02, "row {j}: {var}");
        }
    }
}
