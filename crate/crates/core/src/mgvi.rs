//! Metric Gaussian Variational Inference.
//!
//! The posterior is approximated by `N(ξ̄, Ξ)` with `Ξ⁻¹ = J†MJ + 𝟙`, where `J`
//! is the model Jacobian and `M` the diagonal Fisher metric of the likelihood,
//! both frozen at a metric point `ξ̂`. Samples of `Ξ` are drawn implicitly:
//! a draw `J†n + η` from `N(0, Ξ⁻¹)` is mapped through `Ξ` with conjugate
//! gradient. The mean is then optimized on a fixed sample set by natural
//! gradient steps with a backtracking line search, and the metric point is
//! moved to the new mean.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_len, Error, PartialRun, Result};
use crate::latent::LatentVector;
use crate::likelihood::{noise_from_diagonal, Likelihood};
use crate::linop::{self, Operator};
use crate::model::StandardizedModel;
use crate::rng;
use crate::solver::{cg_solve, CGConfig};
use crate::vector::{all_finite, axpy, dot, norm, sub, sum_in_order};

/// Piecewise-constant schedule: the value at iteration `i` is that of the last
/// entry whose start iteration is `≤ i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    entries: Vec<(usize, T)>,
}

impl<T: Clone> Schedule<T> {
    pub fn new(entries: Vec<(usize, T)>) -> Result<Self> {
        match entries.first() {
            None => return Err(Error::Config("schedule needs at least one entry".into())),
            Some((start, _)) if *start != 0 => {
                return Err(Error::Config("schedule must start at iteration 0".into()))
            }
            _ => {}
        }
        if entries.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Config("schedule iterations must be non-decreasing".into()));
        }
        Ok(Self { entries })
    }

    pub fn constant(value: T) -> Self {
        Self {
            entries: vec![(0, value)],
        }
    }

    pub fn entries(&self) -> &[(usize, T)] {
        &self.entries
    }

    pub fn value_at(&self, iteration: usize) -> &T {
        let idx = self.entries.partition_point(|(start, _)| *start <= iteration);
        &self.entries[idx.saturating_sub(1)].1
    }

    pub fn final_value(&self) -> &T {
        &self.entries.last().expect("non-empty by construction").1
    }

    /// Iteration from which the final value applies.
    pub fn final_start(&self) -> usize {
        self.entries.last().expect("non-empty by construction").0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub initial_step: f64,
    pub shrink_factor: f64,
    pub max_trials: usize,
    pub sufficient_decrease: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink_factor: 0.5,
            max_trials: 12,
            sufficient_decrease: 1e-4,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::Config("line search initial_step must be positive".into()));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(Error::Config("line search shrink_factor must lie in (0, 1)".into()));
        }
        if self.max_trials == 0 {
            return Err(Error::Config("line search needs at least one trial".into()));
        }
        if !(self.sufficient_decrease >= 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::Config("line search sufficient_decrease must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Settings of one natural-gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalGradientConfig {
    pub cg: CGConfig,
    pub line_search: LineSearchConfig,
    /// Below this gradient norm the step is accepted without moving.
    pub gradient_tolerance: f64,
}

impl Default for NaturalGradientConfig {
    fn default() -> Self {
        Self {
            cg: CGConfig::default(),
            line_search: LineSearchConfig::default(),
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MGVIConfig {
    pub global_iterations: usize,
    /// Number of sample pairs per global iteration.
    pub samples: Schedule<usize>,
    pub antithetic: bool,
    pub sampling_cg: Schedule<CGConfig>,
    pub natural_gradient_steps: Schedule<usize>,
    pub natural_gradient: NaturalGradientConfig,
    pub convergence_tolerance: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for MGVIConfig {
    fn default() -> Self {
        Self {
            global_iterations: 20,
            samples: Schedule::constant(2),
            antithetic: true,
            sampling_cg: Schedule::constant(CGConfig::iterations(25)),
            natural_gradient_steps: Schedule::constant(3),
            natural_gradient: NaturalGradientConfig::default(),
            convergence_tolerance: 1e-3,
            init_std: 0.1,
            seed: 0,
        }
    }
}

impl MGVIConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_iterations == 0 {
            return Err(Error::Config("global_iterations must be positive".into()));
        }
        if self.samples.entries().iter().any(|(_, n)| *n == 0) {
            return Err(Error::Config("every sample schedule entry needs at least one pair".into()));
        }
        for (_, cg) in self.sampling_cg.entries() {
            cg.validate()?;
        }
        self.natural_gradient.cg.validate()?;
        self.natural_gradient.line_search.validate()?;
        if !(self.convergence_tolerance >= 0.0) {
            return Err(Error::Config("convergence_tolerance must be non-negative".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One natural-gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub global_iteration: usize,
    pub step: usize,
    pub kl_before: f64,
    pub kl: f64,
    pub gradient_norm: f64,
    pub step_size: f64,
    pub cg_iterations: usize,
    pub line_search_trials: usize,
    pub line_search_failed: bool,
}

/// One global iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub global_iteration: usize,
    pub n_samples: usize,
    pub sampling_cg_iterations: Vec<usize>,
    pub relative_change: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub iterations: Vec<IterationRecord>,
    pub steps: Vec<StepRecord>,
    pub converged: bool,
}

impl Diagnostics {
    pub fn failed_line_searches(&self) -> usize {
        self.steps.iter().filter(|s| s.line_search_failed).count()
    }
}

#[derive(Debug, Clone)]
pub struct ApproximatePosterior {
    pub mean: LatentVector,
    pub residual_samples: Vec<LatentVector>,
    pub metric_point: LatentVector,
    pub diagnostics: Diagnostics,
}

impl ApproximatePosterior {
    /// `mean + residual` for every residual.
    pub fn samples(&self) -> Vec<LatentVector> {
        posterior_samples(&self.mean, &self.residual_samples)
    }

    /// Mean of the sample set, `mean + (Σ residuals)/N`.
    pub fn sample_mean(&self) -> LatentVector {
        let dim = self.mean.total_dim();
        let res: Vec<Vec<f64>> = self.residual_samples.iter().map(|r| r.as_slice().to_vec()).collect();
        let total = sum_in_order(dim, &res);
        let n = self.residual_samples.len().max(1) as f64;
        let values = self
            .mean
            .as_slice()
            .iter()
            .zip(&total)
            .map(|(m, t)| m + t / n)
            .collect();
        self.mean.with_values(values).expect("same layout")
    }
}

pub fn posterior_samples(mean: &LatentVector, residuals: &[LatentVector]) -> Vec<LatentVector> {
    residuals
        .iter()
        .map(|r| {
            let v = mean.as_slice().iter().zip(r.as_slice()).map(|(m, d)| m + d).collect();
            mean.with_values(v).expect("same layout")
        })
        .collect()
}

/// Standardized Hamiltonian `energy(f(ξ)) + ½‖ξ‖²`.
pub fn hamiltonian(model: &StandardizedModel, lik: &Likelihood, xi: &[f64]) -> Result<f64> {
    let theta = model.forward_values(xi)?;
    Ok(lik.energy(&theta)? + 0.5 * dot(xi, xi))
}

/// Hamiltonian and its gradient `J†∇energy + ξ`.
pub fn hamiltonian_with_gradient(model: &StandardizedModel, lik: &Likelihood, xi: &[f64]) -> Result<(f64, Vec<f64>)> {
    let lin = model.linearize(xi)?;
    let energy = lik.energy(&lin.value)?;
    let mut grad = lin.jacobian.rmatvec(&lik.grad_energy(&lin.value)?);
    axpy(1.0, xi, &mut grad);
    Ok((energy + 0.5 * dot(xi, xi), grad))
}

/// Frozen constituents of the metric at one point.
#[derive(Debug, Clone)]
pub struct MetricParts {
    pub jacobian: Operator,
    pub metric_diagonal: Vec<f64>,
}

impl MetricParts {
    pub fn at(model: &StandardizedModel, lik: &Likelihood, xi: &[f64]) -> Result<Self> {
        let lin = model.linearize(xi)?;
        let metric_diagonal = lik.metric_diagonal(&lin.value)?;
        Ok(Self {
            jacobian: lin.jacobian,
            metric_diagonal,
        })
    }

    /// `J†MJ + 𝟙`
    pub fn precision(&self) -> Result<Operator> {
        linop::sandwich_metric(self.jacobian.clone(), linop::diagonal(self.metric_diagonal.clone())?)
    }

    pub fn dim(&self) -> usize {
        self.jacobian.domain_dim()
    }
}

/// `Ξ⁻¹(ξ̂) = J(ξ̂)† M(f(ξ̂)) J(ξ̂) + 𝟙`
pub fn build_metric(model: &StandardizedModel, lik: &Likelihood, xi_hat: &LatentVector) -> Result<Operator> {
    xi_hat.check_layout(model.layout())?;
    MetricParts::at(model, lik, xi_hat.as_slice())?.precision()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDraw {
    pub sample: Vec<f64>,
    pub cg_iterations: usize,
    pub converged: bool,
}

/// One draw from `N(0, Ξ)`.
///
/// CG starts at the prior part `η` of the right-hand side, so directions not
/// yet resolved by a truncated solve keep prior-level variance.
pub fn draw_residual_sample<R: Rng + ?Sized>(
    parts: &MetricParts,
    cg: &CGConfig,
    rng: &mut R,
) -> Result<ResidualDraw> {
    let dim = parts.dim();
    let noise = noise_from_diagonal(&parts.metric_diagonal, rng);
    let eta: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut rhs = parts.jacobian.rmatvec(&noise);
    axpy(1.0, &eta, &mut rhs);
    let precision = parts.precision()?;
    let res = cg_solve(precision.as_ref(), &rhs, &eta, cg)?;
    Ok(ResidualDraw {
        sample: res.solution,
        cg_iterations: res.iterations_used,
        converged: res.converged,
    })
}

/// Residual samples of one global iteration, drawn in parallel on per-draw streams.
///
/// With `antithetic`, each draw is followed by its negation; otherwise
/// `2 · pairs` independent draws are made.
pub fn draw_residual_set(
    parts: &MetricParts,
    pairs: usize,
    antithetic: bool,
    cg: &CGConfig,
    seed: u64,
    iteration: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let n_draws = if antithetic { pairs } else { 2 * pairs };
    let draws: Vec<ResidualDraw> = (0..n_draws)
        .into_par_iter()
        .map(|j| draw_residual_sample(parts, cg, &mut rng::sample_stream(seed, iteration, j)))
        .collect::<Result<_>>()?;
    let cg_iterations = draws.iter().map(|d| d.cg_iterations).collect();
    let mut out = Vec::with_capacity(2 * pairs);
    for d in draws {
        if antithetic {
            let neg: Vec<f64> = d.sample.iter().map(|v| -v).collect();
            out.push(d.sample);
            out.push(neg);
        } else {
            out.push(d.sample);
        }
    }
    Ok((out, cg_iterations))
}

fn shifted(mean: &[f64], residual: &[f64]) -> Vec<f64> {
    mean.iter().zip(residual).map(|(m, r)| m + r).collect()
}

fn check_residuals(dim: usize, residuals: &[Vec<f64>]) -> Result<()> {
    if residuals.is_empty() {
        return Err(Error::Config("KL estimate needs at least one residual sample".into()));
    }
    for r in residuals {
        check_len("residual sample", dim, r.len())?;
    }
    Ok(())
}

/// `(1/N) Σ H(ξ̄ + Δξᵢ)`
pub fn estimate_kl(model: &StandardizedModel, lik: &Likelihood, mean: &[f64], residuals: &[Vec<f64>]) -> Result<f64> {
    check_residuals(mean.len(), residuals)?;
    let values: Vec<f64> = residuals
        .par_iter()
        .map(|r| hamiltonian(model, lik, &shifted(mean, r)))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / residuals.len() as f64)
}

/// KL estimate together with its gradient with respect to the mean.
pub fn estimate_kl_with_gradient(
    model: &StandardizedModel,
    lik: &Likelihood,
    mean: &[f64],
    residuals: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    check_residuals(mean.len(), residuals)?;
    let parts: Vec<(f64, Vec<f64>)> = residuals
        .par_iter()
        .map(|r| hamiltonian_with_gradient(model, lik, &shifted(mean, r)))
        .collect::<Result<_>>()?;
    let n = residuals.len() as f64;
    let kl = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let mut grad = sum_in_order(mean.len(), parts.iter().map(|p| &p.1));
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((kl, grad))
}

pub fn estimate_kl_gradient(
    model: &StandardizedModel,
    lik: &Likelihood,
    mean: &[f64],
    residuals: &[Vec<f64>],
) -> Result<Vec<f64>> {
    Ok(estimate_kl_with_gradient(model, lik, mean, residuals)?.1)
}

/// `(1/N) Σ Ξ⁻¹(ξ̄ + Δξᵢ)` as a sum operator.
pub fn averaged_metric(
    model: &StandardizedModel,
    lik: &Likelihood,
    mean: &[f64],
    residuals: &[Vec<f64>],
) -> Result<Operator> {
    check_residuals(mean.len(), residuals)?;
    let terms: Vec<Operator> = residuals
        .par_iter()
        .map(|r| MetricParts::at(model, lik, &shifted(mean, r))?.precision())
        .collect::<Result<_>>()?;
    let n = terms.len() as f64;
    Ok(linop::scale(1.0 / n, linop::sum(terms)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub mean: Vec<f64>,
    pub kl_before: f64,
    pub kl: f64,
    pub gradient_norm: f64,
    pub step_size: f64,
    pub cg_iterations: usize,
    pub line_search_trials: usize,
    pub line_search_failed: bool,
}

impl StepOutcome {
    pub fn record(&self, global_iteration: usize, step: usize) -> StepRecord {
        StepRecord {
            global_iteration,
            step,
            kl_before: self.kl_before,
            kl: self.kl,
            gradient_norm: self.gradient_norm,
            step_size: self.step_size,
            cg_iterations: self.cg_iterations,
            line_search_trials: self.line_search_trials,
            line_search_failed: self.line_search_failed,
        }
    }
}

/// Solves `⟨Ξ⁻¹⟩ Δ = ∇KL` and backtracks along `−Δ` on the fixed residual set.
pub fn natural_gradient_step(
    model: &StandardizedModel,
    lik: &Likelihood,
    mean: &[f64],
    residuals: &[Vec<f64>],
    cfg: &NaturalGradientConfig,
) -> Result<StepOutcome> {
    let (kl, grad) = estimate_kl_with_gradient(model, lik, mean, residuals)?;
    let gradient_norm = norm(&grad);
    let mut outcome = StepOutcome {
        mean: mean.to_vec(),
        kl_before: kl,
        kl,
        gradient_norm,
        step_size: 0.0,
        cg_iterations: 0,
        line_search_trials: 0,
        line_search_failed: false,
    };
    if !kl.is_finite() || !all_finite(&grad) {
        return Ok(outcome);
    }
    if gradient_norm < cfg.gradient_tolerance {
        return Ok(outcome);
    }
    let metric = averaged_metric(model, lik, mean, residuals)?;
    let zero = vec![0.0; mean.len()];
    let solve = cg_solve(metric.as_ref(), &grad, &zero, &cfg.cg)?;
    outcome.cg_iterations = solve.iterations_used;
    let direction = solve.solution;
    let slope = dot(&grad, &direction);

    let ls = &cfg.line_search;
    let mut t = ls.initial_step;
    for trial in 1..=ls.max_trials {
        outcome.line_search_trials = trial;
        let candidate: Vec<f64> = mean.iter().zip(&direction).map(|(m, d)| m - t * d).collect();
        match estimate_kl(model, lik, &candidate, residuals) {
            Ok(value) if value.is_finite() && value <= kl - ls.sufficient_decrease * t * slope => {
                outcome.mean = candidate;
                outcome.kl = value;
                outcome.step_size = t;
                return Ok(outcome);
            }
            Ok(_) | Err(Error::Domain(_)) => {}
            Err(e) => return Err(e),
        }
        t *= ls.shrink_factor;
    }
    outcome.line_search_failed = true;
    Ok(outcome)
}

/// Progress reported after every natural-gradient step.
pub struct StepEvent<'a> {
    pub record: &'a StepRecord,
    pub mean: &'a [f64],
    pub residuals: &'a [Vec<f64>],
    /// Run time so far, excluding time spent inside the observer.
    pub elapsed: Duration,
}

pub trait Observer {
    fn on_step(&mut self, event: &StepEvent<'_>);
}

impl<F: FnMut(&StepEvent<'_>)> Observer for F {
    fn on_step(&mut self, event: &StepEvent<'_>) {
        self(event)
    }
}

/// Wall clock that can be paused while observers run.
pub(crate) struct RunClock {
    start: Instant,
    excluded: Duration,
}

impl RunClock {
    pub(crate) fn start() -> Self {
        Self {
            start: Instant::now(),
            excluded: Duration::ZERO,
        }
    }

    pub(crate) fn elapsed(&self) -> Duration {
        self.start.elapsed().saturating_sub(self.excluded)
    }

    pub(crate) fn exclude<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.excluded += t0.elapsed();
        out
    }
}

pub(crate) fn initial_state(dim: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng::init_stream(seed);
    (0..dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn run(model: &StandardizedModel, lik: &Likelihood, cfg: &MGVIConfig) -> Result<ApproximatePosterior> {
    run_with_observer(model, lik, cfg, &mut |_: &StepEvent<'_>| {})
}

pub fn run_with_observer(
    model: &StandardizedModel,
    lik: &Likelihood,
    cfg: &MGVIConfig,
    observer: &mut dyn Observer,
) -> Result<ApproximatePosterior> {
    cfg.validate()?;
    check_len("likelihood size vs model output", model.output_dim(), lik.len())?;
    let layout = model.layout().clone();
    let dim = model.input_dim();
    let mut clock = RunClock::start();
    let mut diagnostics = Diagnostics::default();
    let mut xi_hat = initial_state(dim, cfg.init_std, cfg.seed);
    let mut residuals: Vec<Vec<f64>> = Vec::new();
    let mut metric_point = xi_hat.clone();

    let abort = |reason: String, mean: &[f64], i: usize, d: &Diagnostics| Error::Aborted {
        reason,
        partial: Box::new(PartialRun {
            mean: mean.to_vec(),
            global_iteration: i,
            step_records: d.steps.clone(),
        }),
    };

    for i in 0..cfg.global_iterations {
        metric_point = xi_hat.clone();
        let parts = MetricParts::at(model, lik, &xi_hat)?;
        let (set, sampling_cg) = draw_residual_set(
            &parts,
            *cfg.samples.value_at(i),
            cfg.antithetic,
            cfg.sampling_cg.value_at(i),
            cfg.seed,
            i,
        )?;
        residuals = set;
        if residuals.iter().any(|r| !all_finite(r)) {
            return Err(abort("non-finite residual sample".into(), &xi_hat, i, &diagnostics));
        }

        let mut mean = xi_hat.clone();
        for step in 0..*cfg.natural_gradient_steps.value_at(i) {
            let outcome = natural_gradient_step(model, lik, &mean, &residuals, &cfg.natural_gradient)?;
            if !outcome.kl_before.is_finite() {
                return Err(abort(
                    format!("non-finite KL estimate at global iteration {i}, step {step}"),
                    &mean,
                    i,
                    &diagnostics,
                ));
            }
            mean = outcome.mean.clone();
            let record = outcome.record(i, step);
            let elapsed = clock.elapsed();
            clock.exclude(|| {
                observer.on_step(&StepEvent {
                    record: &record,
                    mean: &mean,
                    residuals: &residuals,
                    elapsed,
                })
            });
            diagnostics.steps.push(record);
        }

        let change = norm(&sub(&mean, &xi_hat)) / norm(&xi_hat).max(1.0);
        diagnostics.iterations.push(IterationRecord {
            global_iteration: i,
            n_samples: residuals.len(),
            sampling_cg_iterations: sampling_cg,
            relative_change: change,
        });
        xi_hat = mean;
        if i >= cfg.samples.final_start() && change < cfg.convergence_tolerance {
            diagnostics.converged = true;
            break;
        }
    }

    let to_latent = |v: Vec<f64>| LatentVector::from_values(&layout, v);
    Ok(ApproximatePosterior {
        mean: to_latent(xi_hat)?,
        residual_samples: residuals.into_iter().map(to_latent).collect::<Result<_>>()?,
        metric_point: to_latent(metric_point)?,
        diagnostics,
    })
}
