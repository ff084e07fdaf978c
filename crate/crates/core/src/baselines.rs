//! Comparison methods on the same model and likelihood stack.
//!
//! - MAP by natural-gradient descent on the Hamiltonian (MGVI with a single
//!   zero residual).
//! - Fisher-Laplace: residual draws from the inverse metric at the MAP point.
//! - Mean-field Gaussian VI by stochastic gradient descent with the
//!   reparametrization trick.

use std::time::Duration;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_len, Error, PartialRun, Result};
use crate::latent::LatentVector;
use crate::likelihood::Likelihood;
use crate::mgvi::{
    draw_residual_sample, hamiltonian_with_gradient, initial_state, natural_gradient_step, ApproximatePosterior,
    Diagnostics, IterationRecord, MetricParts, NaturalGradientConfig, Observer, RunClock, StepEvent, StepRecord,
};
use crate::model::StandardizedModel;
use crate::rng;
use crate::solver::CGConfig;
use crate::vector::{all_finite, norm, sum_in_order};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub max_steps: usize,
    pub natural_gradient: NaturalGradientConfig,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            max_steps: 100,
            natural_gradient: NaturalGradientConfig::default(),
            init_std: 0.1,
            seed: 0,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("map max_steps must be positive".into()));
        }
        self.natural_gradient.cg.validate()?;
        self.natural_gradient.line_search.validate()?;
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub estimate: LatentVector,
    pub steps: Vec<StepRecord>,
    /// Gradient norm fell below the configured tolerance.
    pub converged: bool,
}

pub fn map_estimate(model: &StandardizedModel, lik: &Likelihood, cfg: &MapConfig) -> Result<MapEstimate> {
    map_estimate_with_observer(model, lik, cfg, &mut |_: &StepEvent<'_>| {})
}

/// Natural-gradient descent on the Hamiltonian with the Fisher metric at the
/// current point. Stops when the gradient is below tolerance, when the line
/// search cannot improve, or at the step cap.
pub fn map_estimate_with_observer(
    model: &StandardizedModel,
    lik: &Likelihood,
    cfg: &MapConfig,
    observer: &mut dyn Observer,
) -> Result<MapEstimate> {
    cfg.validate()?;
    check_len("likelihood size vs model output", model.output_dim(), lik.len())?;
    let dim = model.input_dim();
    let mut clock = RunClock::start();
    let zero = vec![vec![0.0; dim]];
    let mut xi = initial_state(dim, cfg.init_std, cfg.seed);
    let mut steps = Vec::new();
    let mut converged = false;
    for step in 0..cfg.max_steps {
        let outcome = natural_gradient_step(model, lik, &xi, &zero, &cfg.natural_gradient)?;
        if !outcome.kl_before.is_finite() {
            return Err(Error::Aborted {
                reason: format!("non-finite Hamiltonian at MAP step {step}"),
                partial: Box::new(PartialRun {
                    mean: xi,
                    global_iteration: 0,
                    step_records: steps,
                }),
            });
        }
        converged = outcome.gradient_norm < cfg.natural_gradient.gradient_tolerance;
        let stalled = outcome.line_search_failed;
        xi = outcome.mean.clone();
        let record = outcome.record(0, step);
        let elapsed = clock.elapsed();
        clock.exclude(|| {
            observer.on_step(&StepEvent {
                record: &record,
                mean: &xi,
                residuals: &zero,
                elapsed,
            })
        });
        steps.push(record);
        if converged || stalled {
            break;
        }
    }
    Ok(MapEstimate {
        estimate: LatentVector::from_values(model.layout(), xi)?,
        steps,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceConfig {
    pub n_samples: usize,
    pub cg: CGConfig,
    pub seed: u64,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            cg: CGConfig::iterations(100),
            seed: 0,
        }
    }
}

/// `n_samples` independent residual draws from `N(0, Ξ(ξ̂))` at a fixed point.
pub fn laplace_samples(
    model: &StandardizedModel,
    lik: &Likelihood,
    point: &LatentVector,
    cfg: &LaplaceConfig,
) -> Result<Vec<LatentVector>> {
    if cfg.n_samples == 0 {
        return Err(Error::Config("laplace n_samples must be positive".into()));
    }
    cfg.cg.validate()?;
    point.check_layout(model.layout())?;
    let parts = MetricParts::at(model, lik, point.as_slice())?;
    (0..cfg.n_samples)
        .into_par_iter()
        .map(|j| {
            let draw = draw_residual_sample(&parts, &cfg.cg, &mut rng::sample_stream(cfg.seed, 0, j))?;
            LatentVector::from_values(model.layout(), draw.sample)
        })
        .collect()
}

/// MAP followed by Fisher-Laplace sampling, packaged like an MGVI result.
pub fn laplace(
    model: &StandardizedModel,
    lik: &Likelihood,
    map_cfg: &MapConfig,
    cfg: &LaplaceConfig,
    observer: &mut dyn Observer,
) -> Result<ApproximatePosterior> {
    let map = map_estimate_with_observer(model, lik, map_cfg, observer)?;
    let residual_samples = laplace_samples(model, lik, &map.estimate, cfg)?;
    Ok(ApproximatePosterior {
        mean: map.estimate.clone(),
        metric_point: map.estimate,
        diagnostics: Diagnostics {
            iterations: vec![IterationRecord {
                global_iteration: 0,
                n_samples: residual_samples.len(),
                sampling_cg_iterations: Vec::new(),
                relative_change: 0.0,
            }],
            steps: map.steps,
            converged: map.converged,
        },
        residual_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldConfig {
    pub steps: usize,
    pub draws_per_step: usize,
    /// Step size `s₀` of the schedule `s_t = s₀ / (1 + t/τ)`.
    pub initial_step_size: f64,
    /// Decay constant `τ` of the schedule.
    pub decay_steps: f64,
    pub init_log_std: f64,
    pub init_std: f64,
    /// Updates longer than this are rescaled to this length.
    pub max_update_norm: f64,
    /// Fraction of final steps whose iterates are averaged into the result.
    pub average_fraction: f64,
    pub trace_every: usize,
    pub seed: u64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            draws_per_step: 4,
            initial_step_size: 0.1,
            decay_steps: 1000.0,
            init_log_std: -3.0,
            init_std: 0.1,
            max_update_norm: 1.0,
            average_fraction: 0.5,
            trace_every: 50,
            seed: 0,
        }
    }
}

impl MeanFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.draws_per_step == 0 || self.trace_every == 0 {
            return Err(Error::Config("meanfield steps, draws_per_step and trace_every must be positive".into()));
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return Err(Error::Config("meanfield initial_step_size must be positive".into()));
        }
        if !(self.decay_steps > 0.0) {
            return Err(Error::Config("meanfield decay_steps must be positive".into()));
        }
        if !(self.max_update_norm > 0.0) {
            return Err(Error::Config("meanfield max_update_norm must be positive".into()));
        }
        if !(self.average_fraction >= 0.0 && self.average_fraction < 1.0) {
            return Err(Error::Config("meanfield average_fraction must lie in [0, 1)".into()));
        }
        if !self.init_log_std.is_finite() || !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("meanfield initial state must be finite".into()));
        }
        Ok(())
    }

    pub fn step_size(&self, t: usize) -> f64 {
        self.initial_step_size / (1.0 + t as f64 / self.decay_steps)
    }
}

#[derive(Debug, Clone)]
pub struct MeanFieldState {
    pub mean: LatentVector,
    pub log_std: LatentVector,
    pub step_size: f64,
    pub iteration: usize,
}

impl MeanFieldState {
    pub fn std(&self) -> Vec<f64> {
        self.log_std.as_slice().iter().map(|v| v.exp()).collect()
    }

    /// Draws `mean + std ⊙ ε` on the streams of global iteration `u32::MAX`.
    pub fn samples(&self, n: usize, seed: u64) -> Vec<LatentVector> {
        let std = self.std();
        (0..n)
            .map(|j| {
                let mut r = rng::sample_stream(seed, u32::MAX as usize, j);
                let v = self
                    .mean
                    .as_slice()
                    .iter()
                    .zip(&std)
                    .map(|(m, s)| m + s * r.sample::<f64, _>(StandardNormal))
                    .collect();
                self.mean.with_values(v).expect("same layout")
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldRecord {
    pub step: usize,
    /// Stochastic ELBO estimate, up to the likelihood's dropped constants.
    pub elbo: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct MeanFieldResult {
    pub state: MeanFieldState,
    pub trace: Vec<MeanFieldRecord>,
}

/// Progress reported every `trace_every` steps.
pub struct MeanFieldEvent<'a> {
    pub record: &'a MeanFieldRecord,
    pub mean: &'a [f64],
    pub log_std: &'a [f64],
    pub elapsed: Duration,
}

pub trait MeanFieldObserver {
    fn on_trace(&mut self, event: &MeanFieldEvent<'_>);
}

impl<F: FnMut(&MeanFieldEvent<'_>)> MeanFieldObserver for F {
    fn on_trace(&mut self, event: &MeanFieldEvent<'_>) {
        self(event)
    }
}

/// Negative ELBO on a fixed set of standard-normal draws and its gradients
/// with respect to the mean and the log standard deviation.
///
/// `loss = (1/k) Σ H(m + σ⊙εᵢ) − Σ log σ`
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldObjective {
    pub loss: f64,
    pub grad_mean: Vec<f64>,
    pub grad_log_std: Vec<f64>,
}

pub fn meanfield_objective(
    model: &StandardizedModel,
    lik: &Likelihood,
    mean: &[f64],
    log_std: &[f64],
    eps: &[Vec<f64>],
) -> Result<MeanFieldObjective> {
    let dim = mean.len();
    check_len("meanfield log_std", dim, log_std.len())?;
    if eps.is_empty() {
        return Err(Error::Config("meanfield objective needs at least one draw".into()));
    }
    for e in eps {
        check_len("meanfield draw", dim, e.len())?;
    }
    let std: Vec<f64> = log_std.iter().map(|v| v.exp()).collect();
    let parts: Vec<(f64, Vec<f64>, Vec<f64>)> = eps
        .par_iter()
        .map(|e| {
            let xi: Vec<f64> = (0..dim).map(|i| mean[i] + std[i] * e[i]).collect();
            let (h, g) = hamiltonian_with_gradient(model, lik, &xi)?;
            let gs = (0..dim).map(|i| g[i] * std[i] * e[i]).collect();
            Ok((h, g, gs))
        })
        .collect::<Result<_>>()?;
    let k = eps.len() as f64;
    let h = parts.iter().map(|p| p.0).sum::<f64>() / k;
    let mut grad_mean = sum_in_order(dim, parts.iter().map(|p| &p.1));
    let mut grad_log_std = sum_in_order(dim, parts.iter().map(|p| &p.2));
    grad_mean.iter_mut().for_each(|g| *g /= k);
    grad_log_std.iter_mut().for_each(|g| *g = *g / k - 1.0);
    Ok(MeanFieldObjective {
        loss: h - log_std.iter().sum::<f64>(),
        grad_mean,
        grad_log_std,
    })
}

fn standard_normal_draws(seed: u64, step: usize, k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| {
            let mut r = rng::sample_stream(seed, step, j);
            (0..dim).map(|_| r.sample(StandardNormal)).collect()
        })
        .collect()
}

pub fn meanfield_vi(model: &StandardizedModel, lik: &Likelihood, cfg: &MeanFieldConfig) -> Result<MeanFieldResult> {
    meanfield_vi_with_observer(model, lik, cfg, &mut |_: &MeanFieldEvent<'_>| {})
}

/// Stochastic gradient descent on the negative ELBO with fresh draws per step.
///
/// The returned state is the average of the iterates over the final
/// `average_fraction` of the steps (the last iterate when it is zero).
pub fn meanfield_vi_with_observer(
    model: &StandardizedModel,
    lik: &Likelihood,
    cfg: &MeanFieldConfig,
    observer: &mut dyn MeanFieldObserver,
) -> Result<MeanFieldResult> {
    cfg.validate()?;
    check_len("likelihood size vs model output", model.output_dim(), lik.len())?;
    let dim = model.input_dim();
    let mut clock = RunClock::start();
    let mut mean = initial_state(dim, cfg.init_std, cfg.seed);
    let mut log_std = vec![cfg.init_log_std; dim];
    let entropy_const = 0.5 * dim as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    let average_start = cfg.steps - ((cfg.steps as f64 * cfg.average_fraction).floor() as usize);
    let mut avg_mean = vec![0.0; dim];
    let mut avg_log_std = vec![0.0; dim];
    let mut trace = Vec::new();

    for t in 0..cfg.steps {
        let eps = standard_normal_draws(cfg.seed, t, cfg.draws_per_step, dim);
        let obj = meanfield_objective(model, lik, &mean, &log_std, &eps);
        let obj = match obj {
            Ok(o) if o.loss.is_finite() && all_finite(&o.grad_mean) && all_finite(&o.grad_log_std) => o,
            Ok(_) | Err(Error::Domain(_)) => {
                return Err(Error::Aborted {
                    reason: format!("non-finite ELBO at mean-field step {t}"),
                    partial: Box::new(PartialRun {
                        mean,
                        global_iteration: t,
                        step_records: Vec::new(),
                    }),
                })
            }
            Err(e) => return Err(e),
        };
        let s = cfg.step_size(t);
        let length = s * (norm(&obj.grad_mean).powi(2) + norm(&obj.grad_log_std).powi(2)).sqrt();
        let factor = if length > cfg.max_update_norm { cfg.max_update_norm / length } else { 1.0 };
        for i in 0..dim {
            mean[i] -= s * factor * obj.grad_mean[i];
            log_std[i] -= s * factor * obj.grad_log_std[i];
        }
        if t >= average_start {
            for i in 0..dim {
                avg_mean[i] += mean[i];
                avg_log_std[i] += log_std[i];
            }
        }
        if t % cfg.trace_every == cfg.trace_every - 1 || t + 1 == cfg.steps {
            let record = MeanFieldRecord {
                step: t + 1,
                elbo: entropy_const - obj.loss,
                step_size: s,
            };
            let elapsed = clock.elapsed();
            clock.exclude(|| {
                observer.on_trace(&MeanFieldEvent {
                    record: &record,
                    mean: &mean,
                    log_std: &log_std,
                    elapsed,
                })
            });
            trace.push(record);
        }
    }

    let n_avg = (cfg.steps - average_start) as f64;
    let (mean, log_std) = if n_avg > 0.0 {
        (
            avg_mean.into_iter().map(|v| v / n_avg).collect(),
            avg_log_std.into_iter().map(|v| v / n_avg).collect(),
        )
    } else {
        (mean, log_std)
    };
    Ok(MeanFieldResult {
        state: MeanFieldState {
            mean: LatentVector::from_values(model.layout(), mean)?,
            log_std: LatentVector::from_values(model.layout(), log_std)?,
            step_size: cfg.step_size(cfg.steps - 1),
            iteration: cfg.steps,
        },
        trace,
    })
}
