//! Executes one configured method and collects everything a run emits.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mgvi::baselines::{self, MeanFieldEvent, MeanFieldState};
use mgvi::metrics::{self, EvaluationReport};
use mgvi::mgvi::StepEvent;
use mgvi::problems::BuiltProblem;
use mgvi::vector::{norm, sub};
use mgvi::{LatentVector, Layout};

use crate::config::{Method, RunConfig};
use crate::error::{CliError, Result};
use crate::outputs::{self, FieldRow, RunReport, SampleTable, Timing, TraceRow};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub timing: Timing,
    pub trace: Vec<TraceRow>,
    pub samples: SampleTable,
    pub field: Vec<FieldRow>,
}

/// What the method itself returned, before evaluation.
struct Fit {
    mean: LatentVector,
    samples: Vec<LatentVector>,
    converged: bool,
    global_iterations: usize,
    steps: usize,
    failed_line_searches: usize,
}

/// Trace collection whose own cost is kept off the method's clock.
struct Tracer<'a> {
    problem: &'a BuiltProblem,
    method: Method,
    rows: Vec<TraceRow>,
    spent: Duration,
    error: Option<CliError>,
}

impl<'a> Tracer<'a> {
    fn new(problem: &'a BuiltProblem, method: Method) -> Self {
        Self {
            problem,
            method,
            rows: Vec::new(),
            spent: Duration::ZERO,
            error: None,
        }
    }

    fn record(&mut self, step: usize, elapsed: Duration, objective: f64, samples: &[LatentVector]) {
        let t0 = Instant::now();
        if self.error.is_none() {
            match metrics::evaluate(self.problem, samples, elapsed.as_secs_f64()) {
                Ok(ev) => self.rows.push(trace_row(self.method, step, objective, &ev)),
                Err(e) => self.error = Some(e.into()),
            }
        }
        self.spent += t0.elapsed();
    }

    fn finish(self) -> Result<(Vec<TraceRow>, Duration)> {
        match self.error {
            Some(e) => Err(e),
            None => Ok((self.rows, self.spent)),
        }
    }
}

fn trace_row(method: Method, step: usize, objective: f64, ev: &EvaluationReport) -> TraceRow {
    TraceRow {
        method: method.name().to_string(),
        step,
        wall_time_s: ev.wall_time_s,
        objective,
        rms: ev.rms,
        avg_significance: ev.avg_significance,
        pred_ll_samples: ev.predictive_log_likelihood_samples,
        pred_ll_mean: ev.predictive_log_likelihood_mean,
    }
}

fn latent_samples(layout: &std::sync::Arc<Layout>, mean: &[f64], residuals: &[Vec<f64>]) -> Result<Vec<LatentVector>> {
    let mean = LatentVector::from_values(layout, mean.to_vec())?;
    let residuals = residuals
        .iter()
        .map(|r| LatentVector::from_values(layout, r.clone()))
        .collect::<mgvi::Result<Vec<_>>>()?;
    Ok(mgvi::mgvi::posterior_samples(&mean, &residuals))
}

pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    let problem = cfg.problem.build()?;
    execute_on(&problem, cfg)
}

/// Runs `cfg.method` on an already built problem.
pub fn execute_on(problem: &BuiltProblem, cfg: &RunConfig) -> Result<RunOutput> {
    let layout = problem.model.layout().clone();
    let (model, lik) = (&problem.model, &problem.likelihood);
    let mut tracer = Tracer::new(problem, cfg.method);
    let start = Instant::now();

    let mut on_step = |e: &StepEvent<'_>| {
        let step = tracer.rows.len();
        match latent_samples(&layout, e.mean, e.residuals) {
            Ok(s) => tracer.record(step, e.elapsed, e.record.kl, &s),
            Err(err) => tracer.error = tracer.error.take().or(Some(err)),
        }
    };

    let fit = match cfg.method {
        Method::Mgvi => {
            let post = mgvi::mgvi::run_with_observer(model, lik, &cfg.mgvi, &mut on_step)?;
            Fit {
                samples: post.samples(),
                converged: post.diagnostics.converged,
                global_iterations: post.diagnostics.iterations.len(),
                steps: post.diagnostics.steps.len(),
                failed_line_searches: post.diagnostics.failed_line_searches(),
                mean: post.mean,
            }
        }
        Method::Map => {
            let map = baselines::map_estimate_with_observer(model, lik, &cfg.map, &mut on_step)?;
            Fit {
                samples: vec![map.estimate.clone()],
                converged: map.converged,
                global_iterations: 0,
                steps: map.steps.len(),
                failed_line_searches: map.steps.iter().filter(|s| s.line_search_failed).count(),
                mean: map.estimate,
            }
        }
        Method::Laplace => {
            let post = baselines::laplace(model, lik, &cfg.map, &cfg.laplace, &mut on_step)?;
            Fit {
                samples: post.samples(),
                converged: post.diagnostics.converged,
                global_iterations: 0,
                steps: post.diagnostics.steps.len(),
                failed_line_searches: post.diagnostics.failed_line_searches(),
                mean: post.mean,
            }
        }
        Method::Meanfield => {
            drop(on_step);
            let n = cfg.output.meanfield_samples;
            let seed = cfg.meanfield.seed;
            let mut on_trace = |e: &MeanFieldEvent<'_>| {
                let state = LatentVector::from_values(&layout, e.mean.to_vec()).and_then(|mean| {
                    Ok(MeanFieldState {
                        mean,
                        log_std: LatentVector::from_values(&layout, e.log_std.to_vec())?,
                        step_size: e.record.step_size,
                        iteration: e.record.step,
                    })
                });
                match state {
                    Ok(s) => tracer.record(e.record.step, e.elapsed, -e.record.elbo, &s.samples(n, seed)),
                    Err(err) => tracer.error = tracer.error.take().or(Some(err.into())),
                }
            };
            let res = baselines::meanfield_vi_with_observer(model, lik, &cfg.meanfield, &mut on_trace)?;
            Fit {
                samples: res.state.samples(n, seed),
                converged: false,
                global_iterations: 0,
                steps: res.state.iteration,
                failed_line_searches: 0,
                mean: res.state.mean,
            }
        }
    };
    let total = start.elapsed();
    let (trace, spent) = tracer.finish()?;
    let wall_time_s = total.saturating_sub(spent).as_secs_f64();

    let ev = metrics::evaluate(problem, &fit.samples, wall_time_s)?;
    let dim = problem.dim();
    let mean = fit.mean.as_slice();
    let mean_rel_err = problem
        .reference_mean
        .as_ref()
        .filter(|r| norm(r) > 0.0)
        .map(|r| norm(&sub(mean, r)) / norm(r));
    let report = RunReport {
        problem: problem.name.to_string(),
        preset: cfg.preset.clone(),
        method: cfg.method,
        seed: cfg.seed,
        dim,
        n_samples: fit.samples.len(),
        signal: problem.signal_name.to_string(),
        rms: ev.rms,
        avg_significance: ev.avg_significance,
        predictive_log_likelihood_samples: ev.predictive_log_likelihood_samples,
        predictive_log_likelihood_mean: ev.predictive_log_likelihood_mean,
        mean_norm: norm(mean) / (dim as f64).sqrt(),
        mean_rel_err,
        converged: fit.converged,
        global_iterations: fit.global_iterations,
        steps: fit.steps,
        failed_line_searches: fit.failed_line_searches,
    };
    Ok(RunOutput {
        report,
        timing: Timing { wall_time_s },
        trace,
        samples: SampleTable::from_samples(&layout, &fit.samples),
        field: field_rows(problem, &fit.samples)?,
    })
}

fn field_rows(problem: &BuiltProblem, samples: &[LatentVector]) -> Result<Vec<FieldRow>> {
    let signals = samples
        .iter()
        .map(|s| problem.signal.forward(s))
        .collect::<mgvi::Result<Vec<_>>>()?;
    let (mean, std) = metrics::sample_moments(&signals)?;
    Ok((0..mean.len())
        .map(|i| FieldRow {
            index: i,
            truth: problem.truth_signal.as_ref().map(|t| t[i]),
            mean: mean[i],
            std: std[i],
        })
        .collect())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes the requested outputs plus the effective config. Returns the paths written.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, out: &RunOutput) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let path = dir.join(outputs::CONFIG_FILE);
    fs::write(&path, cfg.to_toml_string()?).map_err(|e| CliError::io(&path, e))?;
    written.push(path);
    let emit = cfg.output.emit;
    if emit.report {
        let p = dir.join(outputs::REPORT_FILE);
        outputs::write_report(&p, &out.report)?;
        written.push(p);
        let p = dir.join(outputs::TIMING_FILE);
        outputs::write_timing(&p, &out.timing)?;
        written.push(p);
    }
    if emit.samples {
        let p = dir.join(outputs::SAMPLES_FILE);
        outputs::write_samples(&p, &out.samples)?;
        written.push(p);
    }
    if emit.trace {
        let p = dir.join(outputs::TRACE_FILE);
        outputs::write_trace(&p, &out.trace)?;
        written.push(p);
    }
    if emit.field {
        let p = dir.join(outputs::FIELD_FILE);
        outputs::write_field(&p, &out.field)?;
        written.push(p);
    }
    Ok(written)
}

/// Records where an aborted run stopped. Returns the file written.
pub fn write_failure(dir: &Path, error: &CliError) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join("failure.txt");
    let mut text = format!("error: {error}\n");
    if let CliError::Inference(mgvi::Error::Aborted { partial, .. }) = error {
        text.push_str(&format!(
            "global_iteration: {}\ncompleted_steps: {}\nmean_norm: {}\n",
            partial.global_iteration,
            partial.step_records.len(),
            norm(&partial.mean)
        ));
        for r in &partial.step_records {
            text.push_str(&format!(
                "step {}.{}: kl {} -> {}, gradient_norm {}, step_size {}\n",
                r.global_iteration, r.step, r.kl_before, r.kl, r.gradient_norm, r.step_size
            ));
        }
    }
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
