//! Run configuration: a preset overlaid with an optional TOML file and flags.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mgvi::baselines::{LaplaceConfig, MapConfig, MeanFieldConfig};
use mgvi::mgvi::{LineSearchConfig, NaturalGradientConfig};
use mgvi::problems::{self, LogisticData, ProblemKind, ProblemSpec};
use mgvi::{CGConfig, MGVIConfig, Schedule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mgvi,
    Map,
    Laplace,
    Meanfield,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mgvi => "mgvi",
            Method::Map => "map",
            Method::Laplace => "laplace",
            Method::Meanfield => "meanfield",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emit {
    pub report: bool,
    pub samples: bool,
    pub trace: bool,
    pub field: bool,
}

impl Emit {
    pub const ALL: Emit = Emit {
        report: true,
        samples: true,
        trace: true,
        field: true,
    };

    fn names(&self) -> Vec<String> {
        [
            (self.report, "report"),
            (self.samples, "samples"),
            (self.trace, "trace"),
            (self.field, "field_csv"),
        ]
        .into_iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| n.to_string())
        .collect()
    }

    fn from_names(names: &[String]) -> Result<Self> {
        let mut e = Emit {
            report: false,
            samples: false,
            trace: false,
            field: false,
        };
        for n in names {
            match n.as_str() {
                "report" => e.report = true,
                "samples" => e.samples = true,
                "trace" => e.trace = true,
                "field_csv" => e.field = true,
                other => {
                    return Err(CliError::config(format!(
                        "output.emit: unknown entry {other:?} (expected report, samples, trace, field_csv)"
                    )))
                }
            }
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub emit: Emit,
    /// Draws from the mean-field approximation used for its trace and report.
    pub meanfield_samples: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            emit: Emit::ALL,
            meanfield_samples: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub method: Method,
    /// Seeds the synthetic problem and every method.
    pub seed: u64,
    pub problem: ProblemSpec,
    /// Source of the polling records when they are not synthetic.
    pub records_file: Option<PathBuf>,
    pub mgvi: MGVIConfig,
    pub map: MapConfig,
    pub laplace: LaplaceConfig,
    pub meanfield: MeanFieldConfig,
    pub output: OutputConfig,
}

pub const DEFAULT_PRESET: &str = "poisson_lognormal";

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let p = problems::preset(name).ok_or_else(|| {
            CliError::config(format!(
                "unknown preset {name:?}; available: {}",
                problems::preset_names().join(", ")
            ))
        })?;
        let mut cfg = RunConfig {
            preset: p.name.to_string(),
            method: Method::Mgvi,
            seed: 0,
            problem: p.problem,
            records_file: None,
            mgvi: p.mgvi,
            map: p.map,
            laplace: p.laplace,
            meanfield: p.meanfield,
            output: OutputConfig::default(),
        };
        cfg.set_seed(0);
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.problem.seed = seed;
        self.mgvi.seed = seed;
        self.map.seed = seed;
        self.laplace.seed = seed;
        self.meanfield.seed = seed;
    }

    /// Parses config text. `problem.records_file` resolves against `base_dir`;
    /// `output.dir` is kept as written.
    /// `preset_override` replaces the file's preset before overlays apply.
    pub fn from_toml_str(text: &str, base_dir: &Path, preset_override: Option<&str>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        let name = preset_override
            .map(str::to_string)
            .or_else(|| raw.preset.clone())
            .unwrap_or_else(|| DEFAULT_PRESET.to_string());
        let mut cfg = RunConfig::from_preset(&name)?;
        if let Some(m) = raw.method {
            cfg.method = m;
        }
        if let Some(p) = &raw.problem {
            apply_problem(&mut cfg, p, base_dir)?;
        }
        if let Some(m) = &raw.mgvi {
            apply_mgvi(&mut cfg.mgvi, m)?;
        }
        if let Some(m) = &raw.map {
            if let Some(v) = m.max_steps {
                cfg.map.max_steps = v;
            }
            if let Some(v) = m.init_std {
                cfg.map.init_std = v;
            }
            if let Some(ng) = &m.natural_gradient {
                apply_natural_gradient(&mut cfg.map.natural_gradient, ng);
            }
        }
        if let Some(l) = &raw.laplace {
            if let Some(v) = l.n_samples {
                cfg.laplace.n_samples = v;
            }
            apply_cg(&mut cfg.laplace.cg, l.cg_iterations, l.cg_relative_tolerance, l.cg_absolute_tolerance);
        }
        if let Some(m) = &raw.meanfield {
            apply_meanfield(&mut cfg.meanfield, m);
        }
        if let Some(o) = &raw.output {
            if let Some(d) = &o.dir {
                cfg.output.dir = PathBuf::from(d);
            }
            if let Some(e) = &o.emit {
                cfg.output.emit = Emit::from_names(e)?;
            }
            if let Some(n) = o.meanfield_samples {
                cfg.output.meanfield_samples = n;
            }
        }
        cfg.set_seed(raw.seed.unwrap_or(cfg.seed));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset_override: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, preset_override).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.mgvi.validate()?;
        self.map.validate()?;
        self.meanfield.validate()?;
        self.laplace.cg.validate()?;
        if self.laplace.n_samples == 0 {
            return Err(CliError::config("laplace.n_samples must be positive"));
        }
        if self.output.meanfield_samples == 0 {
            return Err(CliError::config("output.meanfield_samples must be positive"));
        }
        Ok(())
    }

    /// Effective configuration as TOML. Parsing the text back yields `self`.
    pub fn to_toml_string(&self) -> Result<String> {
        let raw = RawConfig {
            preset: Some(self.preset.clone()),
            method: Some(self.method),
            seed: Some(self.seed),
            problem: Some(raw_problem(self)),
            mgvi: Some(raw_mgvi(&self.mgvi)?),
            map: Some(RawMap {
                max_steps: Some(self.map.max_steps),
                init_std: Some(self.map.init_std),
                natural_gradient: Some(raw_natural_gradient(&self.map.natural_gradient)),
            }),
            laplace: Some(RawLaplace {
                n_samples: Some(self.laplace.n_samples),
                cg_iterations: Some(self.laplace.cg.max_iterations),
                cg_relative_tolerance: Some(self.laplace.cg.relative_residual_tolerance),
                cg_absolute_tolerance: Some(self.laplace.cg.absolute_residual_tolerance),
            }),
            meanfield: Some(raw_meanfield(&self.meanfield)),
            output: Some(RawOutput {
                dir: Some(self.output.dir.to_string_lossy().into_owned()),
                emit: Some(self.output.emit.names()),
                meanfield_samples: Some(self.output.meanfield_samples),
            }),
        };
        toml::to_string(&raw).map_err(|e| CliError::config(e.to_string()))
    }
}

/// An integer applying from iteration 0, or `[start, value]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawSchedule {
    Constant(usize),
    Steps(Vec<(usize, usize)>),
}

impl RawSchedule {
    fn from_schedule(s: &Schedule<usize>) -> Self {
        match s.entries() {
            [(0, v)] => RawSchedule::Constant(*v),
            entries => RawSchedule::Steps(entries.to_vec()),
        }
    }

    fn entries(&self) -> Vec<(usize, usize)> {
        match self {
            RawSchedule::Constant(v) => vec![(0, *v)],
            RawSchedule::Steps(e) => e.clone(),
        }
    }

    fn to_schedule(&self, field: &str) -> Result<Schedule<usize>> {
        Schedule::new(self.entries()).map_err(|e| CliError::config(format!("{field}: {e}")))
    }
}

/// `masked_frame` is a frame index or the string `"none"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawFrame {
    Index(usize),
    Keyword(String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    problem: Option<RawProblem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mgvi: Option<RawMgvi>,
    #[serde(skip_serializing_if = "Option::is_none")]
    map: Option<RawMap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    laplace: Option<RawLaplace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meanfield: Option<RawMeanField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(skip_serializing_if = "Option::is_none")]
    holdout_fraction: Option<f64>,
    // poisson_lognormal
    #[serde(skip_serializing_if = "Option::is_none")]
    n_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exposure: Option<f64>,
    // binary_gp
    #[serde(skip_serializing_if = "Option::is_none")]
    side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tile: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_tau: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smooth_amplitude: Option<f64>,
    // gamma_poisson_nmf
    #[serde(skip_serializing_if = "Option::is_none")]
    n_frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_pixels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    masked_frame: Option<RawFrame>,
    // logistic_regression
    #[serde(skip_serializing_if = "Option::is_none")]
    n_records: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intercept: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gender: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ethnicity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    state_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ethnicity_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    records_file: Option<String>,
    // linear_gaussian, zero_data
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_data: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_variance: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNaturalGradient {
    #[serde(skip_serializing_if = "Option::is_none")]
    cg_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cg_relative_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cg_absolute_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradient_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shrink_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sufficient_decrease: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMgvi {
    #[serde(skip_serializing_if = "Option::is_none")]
    global_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<RawSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    antithetic: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling_cg_iterations: Option<RawSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling_cg_relative_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling_cg_absolute_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    natural_gradient_steps: Option<RawSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    convergence_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    natural_gradient: Option<RawNaturalGradient>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    #[serde(skip_serializing_if = "Option::is_none")]
    max_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    natural_gradient: Option<RawNaturalGradient>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLaplace {
    #[serde(skip_serializing_if = "Option::is_none")]
    n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cg_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cg_relative_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cg_absolute_tolerance: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeanField {
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    draws_per_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_step_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay_steps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_log_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_update_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    average_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_every: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    emit: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meanfield_samples: Option<usize>,
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_cg(cg: &mut CGConfig, iterations: Option<usize>, relative: Option<f64>, absolute: Option<f64>) {
    set(&mut cg.max_iterations, iterations);
    set(&mut cg.relative_residual_tolerance, relative);
    set(&mut cg.absolute_residual_tolerance, absolute);
}

fn apply_natural_gradient(ng: &mut NaturalGradientConfig, raw: &RawNaturalGradient) {
    apply_cg(&mut ng.cg, raw.cg_iterations, raw.cg_relative_tolerance, raw.cg_absolute_tolerance);
    set(&mut ng.gradient_tolerance, raw.gradient_tolerance);
    let ls: &mut LineSearchConfig = &mut ng.line_search;
    set(&mut ls.initial_step, raw.initial_step);
    set(&mut ls.shrink_factor, raw.shrink_factor);
    set(&mut ls.max_trials, raw.max_trials);
    set(&mut ls.sufficient_decrease, raw.sufficient_decrease);
}

fn raw_natural_gradient(ng: &NaturalGradientConfig) -> RawNaturalGradient {
    RawNaturalGradient {
        cg_iterations: Some(ng.cg.max_iterations),
        cg_relative_tolerance: Some(ng.cg.relative_residual_tolerance),
        cg_absolute_tolerance: Some(ng.cg.absolute_residual_tolerance),
        gradient_tolerance: Some(ng.gradient_tolerance),
        initial_step: Some(ng.line_search.initial_step),
        shrink_factor: Some(ng.line_search.shrink_factor),
        max_trials: Some(ng.line_search.max_trials),
        sufficient_decrease: Some(ng.line_search.sufficient_decrease),
    }
}

fn apply_mgvi(cfg: &mut MGVIConfig, raw: &RawMgvi) -> Result<()> {
    set(&mut cfg.global_iterations, raw.global_iterations);
    set(&mut cfg.antithetic, raw.antithetic);
    set(&mut cfg.convergence_tolerance, raw.convergence_tolerance);
    set(&mut cfg.init_std, raw.init_std);
    if let Some(s) = &raw.samples {
        cfg.samples = s.to_schedule("mgvi.samples")?;
    }
    if let Some(s) = &raw.natural_gradient_steps {
        cfg.natural_gradient_steps = s.to_schedule("mgvi.natural_gradient_steps")?;
    }
    let iterations = match &raw.sampling_cg_iterations {
        Some(s) => s.to_schedule("mgvi.sampling_cg_iterations")?,
        None => cg_iteration_schedule(&cfg.sampling_cg),
    };
    let (rel, abs) = cg_tolerances(&cfg.sampling_cg)?;
    let rel = raw.sampling_cg_relative_tolerance.unwrap_or(rel);
    let abs = raw.sampling_cg_absolute_tolerance.unwrap_or(abs);
    let entries = iterations
        .entries()
        .iter()
        .map(|&(start, n)| {
            (
                start,
                CGConfig {
                    max_iterations: n,
                    relative_residual_tolerance: rel,
                    absolute_residual_tolerance: abs,
                },
            )
        })
        .collect();
    cfg.sampling_cg = Schedule::new(entries).map_err(|e| CliError::config(format!("mgvi.sampling_cg_iterations: {e}")))?;
    if let Some(ng) = &raw.natural_gradient {
        apply_natural_gradient(&mut cfg.natural_gradient, ng);
    }
    Ok(())
}

fn cg_iteration_schedule(s: &Schedule<CGConfig>) -> Schedule<usize> {
    let entries = s.entries().iter().map(|(i, c)| (*i, c.max_iterations)).collect();
    Schedule::new(entries).expect("same starts as an ordered schedule")
}

/// The sampling CG schedule varies only its iteration budget.
fn cg_tolerances(s: &Schedule<CGConfig>) -> Result<(f64, f64)> {
    let first = s.entries()[0].1;
    let (rel, abs) = (first.relative_residual_tolerance, first.absolute_residual_tolerance);
    if s
        .entries()
        .iter()
        .any(|(_, c)| c.relative_residual_tolerance != rel || c.absolute_residual_tolerance != abs)
    {
        return Err(CliError::config(
            "mgvi sampling CG schedule with varying tolerances cannot be expressed in a config file",
        ));
    }
    Ok((rel, abs))
}

fn raw_mgvi(cfg: &MGVIConfig) -> Result<RawMgvi> {
    let (rel, abs) = cg_tolerances(&cfg.sampling_cg)?;
    Ok(RawMgvi {
        global_iterations: Some(cfg.global_iterations),
        samples: Some(RawSchedule::from_schedule(&cfg.samples)),
        antithetic: Some(cfg.antithetic),
        sampling_cg_iterations: Some(RawSchedule::from_schedule(&cg_iteration_schedule(&cfg.sampling_cg))),
        sampling_cg_relative_tolerance: Some(rel),
        sampling_cg_absolute_tolerance: Some(abs),
        natural_gradient_steps: Some(RawSchedule::from_schedule(&cfg.natural_gradient_steps)),
        convergence_tolerance: Some(cfg.convergence_tolerance),
        init_std: Some(cfg.init_std),
        natural_gradient: Some(raw_natural_gradient(&cfg.natural_gradient)),
    })
}

fn apply_meanfield(cfg: &mut MeanFieldConfig, raw: &RawMeanField) {
    set(&mut cfg.steps, raw.steps);
    set(&mut cfg.draws_per_step, raw.draws_per_step);
    set(&mut cfg.initial_step_size, raw.initial_step_size);
    set(&mut cfg.decay_steps, raw.decay_steps);
    set(&mut cfg.init_log_std, raw.init_log_std);
    set(&mut cfg.init_std, raw.init_std);
    set(&mut cfg.max_update_norm, raw.max_update_norm);
    set(&mut cfg.average_fraction, raw.average_fraction);
    set(&mut cfg.trace_every, raw.trace_every);
}

fn raw_meanfield(cfg: &MeanFieldConfig) -> RawMeanField {
    RawMeanField {
        steps: Some(cfg.steps),
        draws_per_step: Some(cfg.draws_per_step),
        initial_step_size: Some(cfg.initial_step_size),
        decay_steps: Some(cfg.decay_steps),
        init_log_std: Some(cfg.init_log_std),
        init_std: Some(cfg.init_std),
        max_update_norm: Some(cfg.max_update_norm),
        average_fraction: Some(cfg.average_fraction),
        trace_every: Some(cfg.trace_every),
    }
}

fn set_keys(raw: &RawProblem) -> Vec<&'static str> {
    let flags = [
        ("n_points", raw.n_points.is_some()),
        ("sigma", raw.sigma.is_some()),
        ("length", raw.length.is_some()),
        ("exposure", raw.exposure.is_some()),
        ("side", raw.side.is_some()),
        ("tile", raw.tile.is_some()),
        ("slope_mean", raw.slope_mean.is_some()),
        ("slope_std", raw.slope_std.is_some()),
        ("offset_mean", raw.offset_mean.is_some()),
        ("offset_std", raw.offset_std.is_some()),
        ("n_tau", raw.n_tau.is_some()),
        ("smooth_amplitude", raw.smooth_amplitude.is_some()),
        ("n_frames", raw.n_frames.is_some()),
        ("n_pixels", raw.n_pixels.is_some()),
        ("n_components", raw.n_components.is_some()),
        ("shape", raw.shape.is_some()),
        ("rate", raw.rate.is_some()),
        ("masked_frame", raw.masked_frame.is_some()),
        ("n_records", raw.n_records.is_some()),
        ("n_states", raw.n_states.is_some()),
        ("intercept", raw.intercept.is_some()),
        ("gender", raw.gender.is_some()),
        ("ethnicity", raw.ethnicity.is_some()),
        ("state_scale", raw.state_scale.is_some()),
        ("ethnicity_fraction", raw.ethnicity_fraction.is_some()),
        ("records_file", raw.records_file.is_some()),
        ("dim", raw.dim.is_some()),
        ("n_data", raw.n_data.is_some()),
        ("noise_variance", raw.noise_variance.is_some()),
    ];
    flags.into_iter().filter(|(_, on)| *on).map(|(k, _)| k).collect()
}

fn allowed_keys(kind: &ProblemKind) -> &'static [&'static str] {
    match kind {
        ProblemKind::PoissonLognormal(_) => &["n_points", "sigma", "length", "exposure"],
        ProblemKind::BinaryGp(_) => &[
            "side",
            "tile",
            "slope_mean",
            "slope_std",
            "offset_mean",
            "offset_std",
            "n_tau",
            "smooth_amplitude",
        ],
        ProblemKind::Nmf(_) => &["n_frames", "n_pixels", "n_components", "shape", "rate", "masked_frame"],
        ProblemKind::LogisticRegression(..) => &[
            "n_records",
            "n_states",
            "intercept",
            "gender",
            "ethnicity",
            "state_scale",
            "ethnicity_fraction",
            "records_file",
        ],
        ProblemKind::LinearGaussian(_) | ProblemKind::ZeroData(_) => &["dim", "n_data", "noise_variance"],
    }
}

fn apply_problem(cfg: &mut RunConfig, raw: &RawProblem, base_dir: &Path) -> Result<()> {
    let problem_name = cfg.problem.name();
    let keys = set_keys(raw);
    let allowed = allowed_keys(&cfg.problem.kind);
    if let Some(k) = keys.iter().find(|k| !allowed.contains(k)) {
        return Err(CliError::config(format!(
            "problem.{k} does not apply to problem {problem_name} (preset {})",
            cfg.preset
        )));
    }
    set(&mut cfg.problem.holdout_fraction, raw.holdout_fraction);
    match &mut cfg.problem.kind {
        ProblemKind::PoissonLognormal(s) => {
            set(&mut s.n_points, raw.n_points);
            set(&mut s.sigma, raw.sigma);
            set(&mut s.length, raw.length);
            set(&mut s.exposure, raw.exposure);
        }
        ProblemKind::BinaryGp(s) => {
            set(&mut s.side, raw.side);
            set(&mut s.tile, raw.tile);
            set(&mut s.priors.slope_mean, raw.slope_mean);
            set(&mut s.priors.slope_std, raw.slope_std);
            set(&mut s.priors.offset_mean, raw.offset_mean);
            set(&mut s.priors.offset_std, raw.offset_std);
            set(&mut s.priors.n_tau, raw.n_tau);
            set(&mut s.priors.smooth_amplitude, raw.smooth_amplitude);
        }
        ProblemKind::Nmf(s) => {
            set(&mut s.n_frames, raw.n_frames);
            set(&mut s.n_pixels, raw.n_pixels);
            set(&mut s.n_components, raw.n_components);
            set(&mut s.shape, raw.shape);
            set(&mut s.rate, raw.rate);
            match &raw.masked_frame {
                None => {}
                Some(RawFrame::Index(i)) => s.masked_frame = Some(*i),
                Some(RawFrame::Keyword(k)) if k == "none" => s.masked_frame = None,
                Some(RawFrame::Keyword(k)) => {
                    return Err(CliError::config(format!(
                        "problem.masked_frame must be a frame index or \"none\", got {k:?}"
                    )))
                }
            }
        }
        ProblemKind::LogisticRegression(s, data) => {
            if raw.records_file.is_some() {
                if let Some(k) = keys.iter().find(|k| **k != "records_file") {
                    return Err(CliError::config(format!(
                        "problem.{k} only applies to synthetic records, not with problem.records_file"
                    )));
                }
            }
            set(&mut s.n_records, raw.n_records);
            set(&mut s.n_states, raw.n_states);
            set(&mut s.intercept, raw.intercept);
            set(&mut s.gender, raw.gender);
            set(&mut s.ethnicity, raw.ethnicity);
            set(&mut s.state_scale, raw.state_scale);
            set(&mut s.ethnicity_fraction, raw.ethnicity_fraction);
            if let Some(f) = &raw.records_file {
                let path = base_dir.join(f);
                let file = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
                let records = problems::read_vote_records(file)
                    .map_err(|e| CliError::config(format!("problem.records_file {}: {e}", path.display())))?;
                *data = LogisticData::Records(records);
                cfg.records_file = Some(path);
            }
        }
        ProblemKind::LinearGaussian(s) | ProblemKind::ZeroData(s) => {
            set(&mut s.dim, raw.dim);
            set(&mut s.n_data, raw.n_data);
            set(&mut s.noise_variance, raw.noise_variance);
        }
    }
    Ok(())
}

fn raw_problem(cfg: &RunConfig) -> RawProblem {
    let mut raw = RawProblem {
        holdout_fraction: Some(cfg.problem.holdout_fraction),
        ..RawProblem::default()
    };
    match &cfg.problem.kind {
        ProblemKind::PoissonLognormal(s) => {
            raw.n_points = Some(s.n_points);
            raw.sigma = Some(s.sigma);
            raw.length = Some(s.length);
            raw.exposure = Some(s.exposure);
        }
        ProblemKind::BinaryGp(s) => {
            raw.side = Some(s.side);
            raw.tile = Some(s.tile);
            raw.slope_mean = Some(s.priors.slope_mean);
            raw.slope_std = Some(s.priors.slope_std);
            raw.offset_mean = Some(s.priors.offset_mean);
            raw.offset_std = Some(s.priors.offset_std);
            raw.n_tau = Some(s.priors.n_tau);
            raw.smooth_amplitude = Some(s.priors.smooth_amplitude);
        }
        ProblemKind::Nmf(s) => {
            raw.n_frames = Some(s.n_frames);
            raw.n_pixels = Some(s.n_pixels);
            raw.n_components = Some(s.n_components);
            raw.shape = Some(s.shape);
            raw.rate = Some(s.rate);
            raw.masked_frame = Some(match s.masked_frame {
                Some(i) => RawFrame::Index(i),
                None => RawFrame::Keyword("none".into()),
            });
        }
        ProblemKind::LogisticRegression(s, _) => match &cfg.records_file {
            Some(path) => raw.records_file = Some(path.to_string_lossy().into_owned()),
            None => {
                raw.n_records = Some(s.n_records);
                raw.n_states = Some(s.n_states);
                raw.intercept = Some(s.intercept);
                raw.gender = Some(s.gender);
                raw.ethnicity = Some(s.ethnicity);
                raw.state_scale = Some(s.state_scale);
                raw.ethnicity_fraction = Some(s.ethnicity_fraction);
            }
        },
        ProblemKind::LinearGaussian(s) | ProblemKind::ZeroData(s) => {
            raw.dim = Some(s.dim);
            raw.n_data = Some(s.n_data);
            raw.noise_variance = Some(s.noise_variance);
        }
    }
    raw
}
