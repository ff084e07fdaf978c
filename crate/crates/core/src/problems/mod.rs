//! Benchmark problems at desk scale: synthetic ground truth, data and
//! held-out splits, reproducible from a seed.

mod presets;
mod records;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::latent::{LatentVector, Layout};
use crate::likelihood::{Family, Likelihood};
use crate::linop;
use crate::model::harmonic::HarmonicGrid;
use crate::model::special::norm_ppf;
use crate::model::spectrum::{amplitude_operator, fixed_amplitudes, squared_exponential, SpectrumModel, SpectrumPriors};
use crate::model::{Linear, MatrixProduct, Pointwise, ScalarFn, ScaleBlock, SpectralField, StandardizedModel};
use crate::rng::problem_rng;

pub use presets::{preset, preset_names, Preset};
pub use records::{read_vote_records, write_vote_records, VoteRecord};

const TRUTH: u64 = 1;
const DATA: u64 = 2;
const MASK: u64 = 3;
const HELDOUT_DATA: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonLognormalSpec {
    pub n_points: usize,
    /// Kernel amplitude `σ` (field units).
    pub sigma: f64,
    /// Kernel length scale in units of the domain length.
    pub length: f64,
    /// Exposure `R`; the rate is `R e^{s}`.
    pub exposure: f64,
}

impl Default for PoissonLognormalSpec {
    fn default() -> Self {
        Self {
            n_points: 128,
            sigma: 1.0,
            length: 0.05,
            exposure: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryGpSpec {
    pub side: usize,
    /// Edge length of the checkerboard tiles, in pixels.
    pub tile: usize,
    pub priors: SpectrumPriors,
}

impl Default for BinaryGpSpec {
    fn default() -> Self {
        Self {
            side: 128,
            tile: 16,
            priors: SpectrumPriors::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfSpec {
    pub n_frames: usize,
    pub n_pixels: usize,
    pub n_components: usize,
    pub shape: f64,
    pub rate: f64,
    /// This frame has the second half of its pixels withheld.
    pub masked_frame: Option<usize>,
}

impl Default for NmfSpec {
    fn default() -> Self {
        Self {
            n_frames: 50,
            n_pixels: 64,
            n_components: 3,
            shape: 1.0,
            rate: 1.0,
            masked_frame: Some(25),
        }
    }
}

/// Ground truth and size of the synthetic polling data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticSpec {
    pub n_records: usize,
    pub n_states: usize,
    pub intercept: f64,
    pub gender: f64,
    pub ethnicity: f64,
    /// Spread of the state effects, in (0, 1).
    pub state_scale: f64,
    pub ethnicity_fraction: f64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        Self {
            n_records: 4000,
            n_states: 20,
            intercept: 0.7,
            gender: -0.4,
            ethnicity: -1.2,
            state_scale: 0.5,
            ethnicity_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogisticData {
    Synthetic,
    Records(Vec<VoteRecord>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussianSpec {
    pub dim: usize,
    pub n_data: usize,
    pub noise_variance: f64,
}

impl Default for LinearGaussianSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            n_data: 48,
            noise_variance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    PoissonLognormal(PoissonLognormalSpec),
    BinaryGp(BinaryGpSpec),
    Nmf(NmfSpec),
    LogisticRegression(LogisticSpec, LogisticData),
    LinearGaussian(LinearGaussianSpec),
    /// Linear-Gaussian model with every data point masked.
    ZeroData(LinearGaussianSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Fraction of data points withheld for the predictive likelihood.
    /// The binary GP uses its checkerboard instead.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self.kind {
            ProblemKind::PoissonLognormal(_) => "poisson_lognormal_1d",
            ProblemKind::BinaryGp(_) => "binary_gp_2d",
            ProblemKind::Nmf(_) => "gamma_poisson_nmf",
            ProblemKind::LogisticRegression(..) => "logistic_regression",
            ProblemKind::LinearGaussian(_) => "linear_gaussian",
            ProblemKind::ZeroData(_) => "zero_data",
        }
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        if !(self.holdout_fraction >= 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout_fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        match &self.kind {
            ProblemKind::PoissonLognormal(s) => build_poisson_lognormal(s, self.holdout_fraction, self.seed),
            ProblemKind::BinaryGp(s) => build_binary_gp(s, self.seed),
            ProblemKind::Nmf(s) => build_nmf(s, self.holdout_fraction, self.seed),
            ProblemKind::LogisticRegression(s, data) => {
                build_logistic_regression(s, data, self.holdout_fraction, self.seed)
            }
            ProblemKind::LinearGaussian(s) => build_linear_gaussian(s, false, self.seed),
            ProblemKind::ZeroData(s) => build_linear_gaussian(s, true, self.seed),
        }
    }
}

/// Model, training and held-out likelihoods, and what to compare against.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub name: &'static str,
    pub model: StandardizedModel,
    pub likelihood: Likelihood,
    pub heldout: Likelihood,
    /// Maps a latent vector to the quantity scored against the truth.
    pub signal: StandardizedModel,
    pub signal_name: &'static str,
    pub truth_latent: Option<LatentVector>,
    pub truth_signal: Option<Vec<f64>>,
    /// Exact posterior mean, where one is available in closed form.
    pub reference_mean: Option<Vec<f64>>,
}

impl BuiltProblem {
    pub fn dim(&self) -> usize {
        self.model.input_dim()
    }
}

fn standard_normal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `true` at exactly `round(fraction · n)` positions chosen uniformly.
pub fn holdout_mask(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let k = ((n as f64) * fraction).round() as usize;
    let mut mask = vec![false; n];
    for i in index::sample(&mut problem_rng(seed, MASK), n, k.min(n)) {
        mask[i] = true;
    }
    mask
}

fn split(family: Family, data: Vec<f64>, held: &[bool]) -> Result<(Likelihood, Likelihood)> {
    let train = Likelihood::new(family, data.clone(), held.iter().map(|h| !h).collect())?;
    let heldout = Likelihood::new(family, data, held.to_vec())?;
    Ok((train, heldout))
}

fn check_power_of_two(what: &str, n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Config(format!("{what} must be a power of two ≥ 2, got {n}")));
    }
    Ok(())
}

/// `λ = R exp(A ξ)` with `A` the squared-exponential amplitude operator on a periodic grid.
pub fn build_poisson_lognormal(spec: &PoissonLognormalSpec, holdout_fraction: f64, seed: u64) -> Result<BuiltProblem> {
    check_power_of_two("poisson grid size", spec.n_points)?;
    if !(spec.sigma >= 0.0 && spec.length > 0.0 && spec.exposure > 0.0) {
        return Err(Error::Config("poisson kernel needs sigma ≥ 0, length > 0, exposure > 0".into()));
    }
    let n = spec.n_points;
    let grid = HarmonicGrid::new(&[n])?;
    let amps = fixed_amplitudes(&grid, squared_exponential(spec.sigma, spec.length));
    let a = amplitude_operator(&grid, amps)?;
    let layout = Layout::flat("field", n)?;
    let model = StandardizedModel::builder(layout.clone())
        .then(Linear::new(a.clone()))
        .then(Pointwise::full(ScalarFn::Exp, n))
        .then(Linear::new(linop::diagonal(vec![spec.exposure; n])?))
        .build()?;
    let signal = StandardizedModel::builder(layout.clone()).then(Linear::new(a)).build()?;

    let truth = LatentVector::from_values(&layout, standard_normal(&mut problem_rng(seed, TRUTH), n))?;
    let rate = model.forward(&truth)?;
    let data = Likelihood::simulate(Family::Poisson, &rate, &mut problem_rng(seed, DATA))?;
    let (likelihood, heldout) = split(Family::Poisson, data, &holdout_mask(n, holdout_fraction, seed))?;
    Ok(BuiltProblem {
        name: "poisson_lognormal_1d",
        truth_signal: Some(signal.forward(&truth)?),
        model,
        likelihood,
        heldout,
        signal,
        signal_name: "log_rate",
        truth_latent: Some(truth),
        reference_mean: None,
    })
}

/// Observed pixels of a checkerboard of `tile × tile` squares.
pub fn checkerboard(side: usize, tile: usize) -> Vec<bool> {
    (0..side * side)
        .map(|i| ((i / side) / tile + (i % side) / tile) % 2 == 0)
        .collect()
}

/// `μ = ½(1 + tanh s)` with `s` a periodic 2-D field whose spectrum is learned.
pub fn build_binary_gp(spec: &BinaryGpSpec, seed: u64) -> Result<BuiltProblem> {
    check_power_of_two("binary GP grid side", spec.side)?;
    if spec.tile == 0 || spec.side % spec.tile != 0 || (spec.side / spec.tile) % 2 != 0 {
        return Err(Error::Config(format!(
            "checkerboard tile {} must divide side {} into an even number of tiles",
            spec.tile, spec.side
        )));
    }
    let grid = HarmonicGrid::new(&[spec.side, spec.side])?;
    let n = grid.len();
    let spectrum = Arc::new(SpectrumModel::new(grid, spec.priors)?);
    let layout = Layout::new([
        ("field", vec![spec.side, spec.side]),
        ("slope", vec![1]),
        ("offset", vec![1]),
        ("smooth", vec![spectrum.n_tau()]),
    ])?;
    let model = StandardizedModel::builder(layout.clone())
        .then(SpectralField::new(spectrum))
        .then(Pointwise::full(ScalarFn::TanhSigmoid, n))
        .build()?;

    let truth = LatentVector::from_values(&layout, standard_normal(&mut problem_rng(seed, TRUTH), layout.total_dim()))?;
    let rate = model.forward(&truth)?;
    let data = Likelihood::simulate(Family::Bernoulli, &rate, &mut problem_rng(seed, DATA))?;
    let held: Vec<bool> = checkerboard(spec.side, spec.tile).into_iter().map(|o| !o).collect();
    let (likelihood, heldout) = split(Family::Bernoulli, data, &held)?;
    Ok(BuiltProblem {
        name: "binary_gp_2d",
        signal: model.clone(),
        model,
        likelihood,
        heldout,
        signal_name: "rate",
        truth_signal: Some(rate),
        truth_latent: Some(truth),
        reference_mean: None,
    })
}

/// `D = M C` with Gamma-distributed mixture and component entries, Poisson counts.
pub fn build_nmf(spec: &NmfSpec, holdout_fraction: f64, seed: u64) -> Result<BuiltProblem> {
    if spec.n_frames == 0 || spec.n_pixels == 0 || spec.n_components == 0 {
        return Err(Error::Config("nmf sizes must be positive".into()));
    }
    if !(spec.shape > 0.0 && spec.rate > 0.0) {
        return Err(Error::Config("nmf Gamma shape and rate must be positive".into()));
    }
    if let Some(f) = spec.masked_frame {
        if f >= spec.n_frames {
            return Err(Error::Config(format!("masked frame {f} out of range for {} frames", spec.n_frames)));
        }
    }
    let (f, p, c) = (spec.n_frames, spec.n_pixels, spec.n_components);
    let layout = Layout::new([("mixture", vec![f, c]), ("components", vec![c, p])])?;
    let dim = layout.total_dim();
    let model = StandardizedModel::builder(layout.clone())
        .then(Pointwise::full(
            ScalarFn::GammaStandardize {
                shape: spec.shape,
                rate: spec.rate,
            },
            dim,
        ))
        .then(MatrixProduct::new(f, c, p)?)
        .build()?;

    let truth = LatentVector::from_values(&layout, standard_normal(&mut problem_rng(seed, TRUTH), dim))?;
    let intensity = model.forward(&truth)?;
    let data = Likelihood::simulate(Family::Poisson, &intensity, &mut problem_rng(seed, DATA))?;
    let mut held = holdout_mask(f * p, holdout_fraction, seed);
    if let Some(frame) = spec.masked_frame {
        for v in &mut held[frame * p + p / 2..(frame + 1) * p] {
            *v = true;
        }
    }
    let (likelihood, heldout) = split(Family::Poisson, data, &held)?;
    Ok(BuiltProblem {
        name: "gamma_poisson_nmf",
        signal: model.clone(),
        model,
        likelihood,
        heldout,
        signal_name: "intensity",
        truth_signal: Some(intensity),
        truth_latent: Some(truth),
        reference_mean: None,
    })
}

/// Synthetic polling records drawn from the model with the coefficients in `spec`.
pub fn synthetic_vote_records(spec: &LogisticSpec, seed: u64) -> Result<(Vec<VoteRecord>, LatentVector)> {
    if spec.n_records == 0 || spec.n_states == 0 {
        return Err(Error::Config("logistic regression needs records and states".into()));
    }
    if !(spec.state_scale > 0.0 && spec.state_scale < 1.0) {
        return Err(Error::Config("state_scale must lie in (0, 1)".into()));
    }
    let layout = logistic_layout(spec.n_states)?;
    let mut truth_rng = problem_rng(seed, TRUTH);
    let mut values = vec![spec.intercept, spec.gender, spec.ethnicity];
    values.extend(standard_normal(&mut truth_rng, spec.n_states));
    values.push(norm_ppf(spec.state_scale)?);
    let truth = LatentVector::from_values(&layout, values)?;

    let mut rng = problem_rng(seed, DATA);
    let mut records: Vec<VoteRecord> = (0..spec.n_records)
        .map(|_| VoteRecord {
            gender: u8::from(rng.random::<f64>() < 0.5),
            ethnicity: u8::from(rng.random::<f64>() < spec.ethnicity_fraction),
            state: rng.random_range(1..=spec.n_states),
            vote: 0,
        })
        .collect();
    let model = logistic_model(&records, spec.n_states)?;
    let mu = model.forward(&truth)?;
    let votes = Likelihood::simulate(Family::Bernoulli, &mu, &mut rng)?;
    for (r, v) in records.iter_mut().zip(votes) {
        r.vote = v as u8;
    }
    Ok((records, truth))
}

fn logistic_layout(n_states: usize) -> Result<Arc<Layout>> {
    Layout::new([
        ("intercept", vec![1]),
        ("gender", vec![1]),
        ("ethnicity", vec![1]),
        ("state", vec![n_states]),
        ("state_scale", vec![1]),
    ])
}

/// `μ = σ(β₀ + g β_g + e β_e + Φ(ξ_σ) ξ_state[s])`
fn logistic_model(records: &[VoteRecord], n_states: usize) -> Result<StandardizedModel> {
    let layout = logistic_layout(n_states)?;
    let dim = layout.total_dim();
    let states = 3..3 + n_states;
    let mut design = DMatrix::zeros(records.len(), dim);
    for (i, r) in records.iter().enumerate() {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = f64::from(r.gender);
        design[(i, 2)] = f64::from(r.ethnicity);
        design[(i, 2 + r.state)] = 1.0;
    }
    StandardizedModel::builder(layout)
        .then(ScaleBlock::new(dim, states, dim - 1, ScalarFn::GaussianCdf)?)
        .then(Linear::new(linop::dense(design)?))
        .then(Pointwise::full(ScalarFn::Logistic, records.len()))
        .build()
}

/// Coefficients `[β₀, β_g, β_e, β_state…, σ_state]` as a function of the latent vector.
fn logistic_coefficients(n_states: usize) -> Result<StandardizedModel> {
    let layout = logistic_layout(n_states)?;
    let dim = layout.total_dim();
    StandardizedModel::builder(layout)
        .then(ScaleBlock::new(dim, 3..3 + n_states, dim - 1, ScalarFn::GaussianCdf)?)
        .then(Pointwise::on_range(ScalarFn::GaussianCdf, dim, dim - 1..dim)?)
        .build()
}

pub fn build_logistic_regression(
    spec: &LogisticSpec,
    data: &LogisticData,
    holdout_fraction: f64,
    seed: u64,
) -> Result<BuiltProblem> {
    let (records, truth, n_states) = match data {
        LogisticData::Synthetic => {
            let (records, truth) = synthetic_vote_records(spec, seed)?;
            (records, Some(truth), spec.n_states)
        }
        LogisticData::Records(records) => {
            if records.is_empty() {
                return Err(Error::Ingestion {
                    row: 0,
                    message: "no records".into(),
                });
            }
            let n_states = records.iter().map(|r| r.state).max().unwrap_or(1);
            (records.clone(), None, n_states)
        }
    };
    let model = logistic_model(&records, n_states)?;
    let signal = logistic_coefficients(n_states)?;
    let votes: Vec<f64> = records.iter().map(|r| f64::from(r.vote)).collect();
    let held = holdout_mask(records.len(), holdout_fraction, seed);
    let (likelihood, heldout) = split(Family::Bernoulli, votes, &held)?;
    let truth_signal = truth.as_ref().map(|t| signal.forward(t)).transpose()?;
    Ok(BuiltProblem {
        name: "logistic_regression",
        model,
        likelihood,
        heldout,
        signal,
        signal_name: "coefficients",
        truth_latent: truth,
        truth_signal,
        reference_mean: None,
    })
}

/// `d = Rξ + n` with a random response. With `masked`, every data point is
/// withheld and the posterior is the prior. The held-out set is an independent
/// replicate of the data.
pub fn build_linear_gaussian(spec: &LinearGaussianSpec, masked: bool, seed: u64) -> Result<BuiltProblem> {
    if spec.dim == 0 || spec.n_data == 0 || !(spec.noise_variance > 0.0) {
        return Err(Error::Config("linear Gaussian needs positive dim, n_data and noise_variance".into()));
    }
    let (n, m, nv) = (spec.dim, spec.n_data, spec.noise_variance);
    let mut rng = problem_rng(seed, TRUTH);
    let scale = (n as f64).sqrt();
    let r = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal) / scale);
    let truth_values = if masked { vec![0.0; n] } else { standard_normal(&mut rng, n) };
    let layout = Layout::flat("xi", n)?;
    let model = StandardizedModel::builder(layout.clone())
        .then(Linear::new(linop::dense(r.clone())?))
        .build()?;
    let signal = StandardizedModel::builder(layout.clone())
        .then(Linear::new(linop::identity(n)?))
        .build()?;
    let truth = LatentVector::from_values(&layout, truth_values)?;
    let clean = model.forward(&truth)?;
    let family = Family::Gaussian { noise_variance: nv };
    let data = Likelihood::simulate(family, &clean, &mut problem_rng(seed, DATA))?;
    let replicate = Likelihood::simulate(family, &clean, &mut problem_rng(seed, HELDOUT_DATA))?;
    let likelihood = Likelihood::new(family, data.clone(), vec![!masked; m])?;
    let heldout = Likelihood::new(family, replicate, vec![true; m])?;

    let reference = if masked {
        vec![0.0; n]
    } else {
        let prec = r.transpose() * &r / nv + DMatrix::identity(n, n);
        let rhs = r.transpose() * DVector::from_vec(data) / nv;
        let chol = prec
            .cholesky()
            .ok_or_else(|| Error::Domain("posterior precision is not positive definite".into()))?;
        chol.solve(&rhs).iter().copied().collect()
    };
    Ok(BuiltProblem {
        name: if masked { "zero_data" } else { "linear_gaussian" },
        model,
        likelihood,
        heldout,
        signal,
        signal_name: "latent",
        truth_signal: Some(truth.as_slice().to_vec()),
        truth_latent: Some(truth),
        reference_mean: Some(reference),
    })
}
