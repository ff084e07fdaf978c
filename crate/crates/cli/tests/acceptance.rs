//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits nonzero if any check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use mgvi::baselines::{meanfield_vi, MeanFieldConfig};
use mgvi::linop::{dense, to_dense};
use mgvi::metrics::predictive_likelihood;
use mgvi::mgvi::{build_metric, draw_residual_sample, draw_residual_set, estimate_kl, estimate_kl_gradient, MetricParts};
use mgvi::model::special::gamma_standardize;
use mgvi::model::Linear;
use mgvi::problems::{build_linear_gaussian, checkerboard, preset_names, LinearGaussianSpec, ProblemKind};
use mgvi::rng::sample_stream;
use mgvi::{CGConfig, LatentVector, Layout, Likelihood, MGVIConfig, StandardizedModel};
use mgvi_cli::oracle::{covariance_z_score, run_oracle_suite, OracleOptions};
use mgvi_cli::runner::{execute, execute_on};
use mgvi_cli::{Method, RunConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Gamma};

type Outcome = Result<String, String>;

fn normals(seed: u64, index: usize, n: usize) -> Vec<f64> {
    let mut rng = sample_stream(seed, 1 << 20, index);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn preset_config(name: &str, method: Method, seed: u64) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::from_preset(name).map_err(err)?;
    cfg.method = method;
    cfg.set_seed(seed);
    Ok(cfg)
}

/// Independent draws from the residual distribution, stream `k` for draw `k`.
fn residual_draws(parts: &MetricParts, cg: &CGConfig, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, String> {
    (0..n)
        .into_par_iter()
        .map(|k| draw_residual_sample(parts, cg, &mut sample_stream(seed, 0, k)).map(|d| d.sample))
        .collect::<mgvi::Result<Vec<_>>>()
        .map_err(err)
}

/// Per-coordinate `(1/N) Σ x²` and its standard error from the fourth moment.
fn second_moments(draws: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = draws.len() as f64;
    let dim = draws[0].len();
    let mut m2 = vec![0.0; dim];
    let mut m4 = vec![0.0; dim];
    for d in draws {
        for (i, v) in d.iter().enumerate() {
            m2[i] += v * v;
            m4[i] += v.powi(4);
        }
    }
    let var: Vec<f64> = m2.iter().map(|s| s / n).collect();
    let se = m4
        .iter()
        .zip(&var)
        .map(|(s4, v)| ((s4 / n - v * v).max(0.0) / n).sqrt())
        .collect();
    (var, se)
}

fn dense_covariance(model: &StandardizedModel, lik: &Likelihood, at: &LatentVector) -> Result<DMatrix<f64>, String> {
    let metric = build_metric(model, lik, at).map_err(err)?;
    let m = to_dense(&*metric, 1024).map_err(err)?;
    m.try_inverse().ok_or_else(|| "metric is singular".to_string())
}

fn linear_gaussian_exactness() -> Outcome {
    let start = Instant::now();
    let cfg = preset_config("linear_gaussian", Method::Mgvi, 0)?;
    let problem = cfg.problem.build().map_err(err)?;
    let out = execute_on(&problem, &cfg).map_err(err)?;
    let rel = out.report.mean_rel_err.ok_or("no closed-form mean")?;

    let at = problem.truth_latent.clone().ok_or("no latent truth")?;
    let cov = dense_covariance(&problem.model, &problem.likelihood, &at)?;
    let parts = MetricParts::at(&problem.model, &problem.likelihood, at.as_slice()).map_err(err)?;
    let draws = residual_draws(&parts, &CGConfig::tight(500), 20_000, 1)?;
    let z = covariance_z_score(&draws, &cov);
    let elapsed = start.elapsed().as_secs_f64();
    ensure(
        problem.dim() == 32 && rel < 1e-6 && z < 5.0 && elapsed < 30.0,
        format!(
            "dim {}, mean rel err {rel:.2e} (< 1e-6), covariance max z {z:.2} (< 5), {elapsed:.1} s (< 30)",
            problem.dim()
        ),
    )
}

fn prior_only_limit() -> Outcome {
    let cfg = preset_config("zero_data", Method::Mgvi, 0)?;
    let problem = cfg.problem.build().map_err(err)?;
    let out = execute_on(&problem, &cfg).map_err(err)?;
    let mean_norm = out.report.mean_norm;
    let dim = problem.dim();
    let at = LatentVector::zeros(problem.model.layout());
    let parts = MetricParts::at(&problem.model, &problem.likelihood, at.as_slice()).map_err(err)?;
    let draws = residual_draws(&parts, &cfg.mgvi.sampling_cg.final_value().clone(), 10_000, 2)?;
    let (var, _) = second_moments(&draws);
    let worst = var.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    ensure(
        mean_norm < 0.05 && worst <= 0.05,
        format!("dim {dim}, ‖mean‖/√dim {mean_norm:.2e} (< 0.05), max |var − 1| {worst:.4} (≤ 0.05)"),
    )
}

fn dense_oracle_equivalence() -> Outcome {
    let report = run_oracle_suite(&OracleOptions::default()).map_err(err)?;
    let failed: Vec<String> = report
        .failures()
        .map(|r| format!("{} on {} = {:.3e}", r.check, r.instance, r.value))
        .collect();
    ensure(
        report.all_passed() && report.skipped.is_empty(),
        if failed.is_empty() && report.skipped.is_empty() {
            format!("{} checks on dims ≤ 16", report.rows.len())
        } else {
            format!("failed: {failed:?}; skipped: {:?}", report.skipped)
        },
    )
}

/// Ridders' extrapolation of central differences, starting at step `h` and
/// returning the tableau entry with the smallest error estimate.
fn ridders(f: &dyn Fn(f64) -> Result<f64, String>, h: f64) -> Result<f64, String> {
    const SHRINK: f64 = 1.4;
    const LEVELS: usize = 10;
    let central = |h: f64| -> Result<f64, String> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let mut table = vec![vec![0.0; LEVELS]; LEVELS];
    let (mut step, mut best, mut best_err) = (h, 0.0, f64::INFINITY);
    table[0][0] = central(step)?;
    for i in 1..LEVELS {
        step /= SHRINK;
        table[0][i] = central(step)?;
        let mut factor = SHRINK * SHRINK;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * factor - table[j - 1][i - 1]) / (factor - 1.0);
            factor *= SHRINK * SHRINK;
            let e = (table[j][i] - table[j - 1][i]).abs().max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= best_err {
                best_err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= 2.0 * best_err {
            break;
        }
    }
    Ok(best)
}

fn gradient_fidelity() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["poisson_lognormal", "binary_gp", "gamma_poisson_nmf", "logistic_regression"] {
        let cfg = preset_config(name, Method::Mgvi, 0)?;
        let problem = cfg.problem.build().map_err(err)?;
        let (model, lik) = (&problem.model, &problem.likelihood);
        let dim = problem.dim();
        let mean: Vec<f64> = normals(3, 0, dim).iter().map(|v| 0.3 * v).collect();
        let parts = MetricParts::at(model, lik, &mean).map_err(err)?;
        let (residuals, _) = draw_residual_set(&parts, 2, true, &CGConfig::iterations(10), 3, 0).map_err(err)?;
        let grad = estimate_kl_gradient(model, lik, &mean, &residuals).map_err(err)?;
        let mut worst: f64 = 0.0;
        for k in 0..20 {
            let mut v = normals(4, k, dim);
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= len);
            let along = |t: f64| -> Result<f64, String> {
                let x: Vec<f64> = mean.iter().zip(&v).map(|(m, d)| m + t * d).collect();
                estimate_kl(model, lik, &x, &residuals).map_err(err)
            };
            let fd = ridders(&along, 0.1)?;
            let analytic: f64 = grad.iter().zip(&v).map(|(g, d)| g * d).sum();
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
            worst = if rel.is_nan() { f64::NAN } else { worst.max(rel) };
        }
        ok &= worst < 1e-6;
        lines.push(format!("{name} {worst:.1e}"));
    }
    ensure(ok, format!("max relative error (< 1e-6): {}", lines.join(", ")))
}

fn truncation_safety() -> Outcome {
    let spec = LinearGaussianSpec {
        dim: 10,
        n_data: 20,
        noise_variance: 0.05,
    };
    let problem = build_linear_gaussian(&spec, false, 5).map_err(err)?;
    let at = LatentVector::zeros(problem.model.layout());
    let cov = dense_covariance(&problem.model, &problem.likelihood, &at)?;
    let parts = MetricParts::at(&problem.model, &problem.likelihood, at.as_slice()).map_err(err)?;
    let draws = residual_draws(&parts, &CGConfig::iterations(1), 20_000, 6)?;
    let (var, se) = second_moments(&draws);
    let margin = (0..spec.dim)
        .map(|i| (var[i] - cov[(i, i)]) / se[i])
        .fold(f64::INFINITY, f64::min);
    let ratio = (0..spec.dim).map(|i| var[i] / cov[(i, i)]).fold(f64::INFINITY, f64::min);
    ensure(
        margin >= -5.0,
        format!("min (var − dense var)/SE {margin:.2} (≥ −5), min var ratio {ratio:.3}"),
    )
}

fn antithetic_exactness() -> Outcome {
    let (n, m, noise_variance) = (8, 12, 0.3);
    let r = DMatrix::from_column_slice(m, n, &normals(7, 0, m * n));
    let d = normals(7, 1, m);
    let model = StandardizedModel::builder(Layout::flat("xi", n).map_err(err)?)
        .then(Linear::new(dense(r.clone()).map_err(err)?))
        .build()
        .map_err(err)?;
    let lik = Likelihood::gaussian(d.clone(), noise_variance).map_err(err)?;
    let mean = normals(7, 2, n);
    let parts = MetricParts::at(&model, &lik, &mean).map_err(err)?;
    let (pair, _) = draw_residual_set(&parts, 1, true, &CGConfig::iterations(3), 7, 0).map_err(err)?;
    let grad = estimate_kl_gradient(&model, &lik, &mean, &pair).map_err(err)?;

    let precision = r.transpose() * &r / noise_variance + DMatrix::identity(n, n);
    let exact = &precision * DVector::from_column_slice(&mean) - r.transpose() * DVector::from_vec(d) / noise_variance;
    let diff = grad.iter().zip(exact.iter()).map(|(g, e)| (g - e).abs()).fold(0.0, f64::max);
    let rel = diff / exact.amax();

    let cfg = MGVIConfig {
        global_iterations: 3,
        ..MGVIConfig::default()
    };
    let post = mgvi::mgvi::run(&model, &lik, &cfg).map_err(err)?;
    let bitwise = post
        .sample_mean()
        .as_slice()
        .iter()
        .zip(post.mean.as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(
        rel < 1e-13 && bitwise,
        format!("pair gradient rel err {rel:.1e} (< 1e-13), sample mean bit-identical: {bitwise}"),
    )
}

fn calibration_band() -> Outcome {
    let mut values = Vec::new();
    let mut ok = true;
    for seed in 0..5 {
        let cfg = preset_config("poisson_lognormal", Method::Mgvi, seed)?;
        let start = Instant::now();
        let out = execute(&cfg).map_err(err)?;
        let elapsed = start.elapsed().as_secs_f64();
        let avg = out.report.avg_significance.ok_or("no significance")?;
        ok &= (0.5..=2.0).contains(&avg) && elapsed < 120.0;
        values.push(format!("seed {seed}: {avg:.3} in {elapsed:.1} s"));
    }
    ensure(ok, format!("avg significance in [0.5, 2], < 120 s each: {}", values.join(", ")))
}

fn binary_gp_desk_run() -> Outcome {
    let cfg = preset_config("binary_gp", Method::Mgvi, 0)?;
    let ProblemKind::BinaryGp(spec) = cfg.problem.kind.clone() else {
        return Err("binary_gp preset has another problem kind".into());
    };
    let start = Instant::now();
    let problem = cfg.problem.build().map_err(err)?;
    let out = execute_on(&problem, &cfg).map_err(err)?;
    let elapsed = start.elapsed().as_secs_f64();

    let layout = problem.model.layout();
    let prior: Vec<LatentVector> = (0..out.report.n_samples)
        .map(|k| LatentVector::from_values(layout, normals(8, k, layout.total_dim())))
        .collect::<mgvi::Result<_>>()
        .map_err(err)?;
    let (prior_samples, _) = predictive_likelihood(&problem.heldout, &problem.model, &prior).map_err(err)?;
    let (_, prior_mean) =
        predictive_likelihood(&problem.heldout, &problem.model, &[LatentVector::zeros(layout)]).map_err(err)?;

    let observed = checkerboard(spec.side, spec.tile);
    let avg_std = |want: bool| {
        let picked: Vec<f64> = out.field.iter().filter(|f| observed[f.index] == want).map(|f| f.std).collect();
        picked.iter().sum::<f64>() / picked.len() as f64
    };
    let (std_unobserved, std_observed) = (avg_std(false), avg_std(true));
    let r = &out.report;
    ensure(
        r.global_iterations == 20
            && elapsed < 900.0
            && r.predictive_log_likelihood_samples > prior_samples
            && r.predictive_log_likelihood_mean > prior_mean
            && std_unobserved > std_observed,
        format!(
            "{} iterations in {elapsed:.0} s (< 900); held-out log-lik samples {:.1} vs prior {prior_samples:.1}, \
             at mean {:.1} vs prior {prior_mean:.1}; rate std unobserved {std_unobserved:.4} vs observed {std_observed:.4}",
            r.global_iterations, r.predictive_log_likelihood_samples, r.predictive_log_likelihood_mean
        ),
    )
}

fn meanfield_baseline() -> Outcome {
    let d = 1.3;
    let model = StandardizedModel::builder(Layout::flat("xi", 1).map_err(err)?)
        .then(Linear::new(dense(DMatrix::identity(1, 1)).map_err(err)?))
        .build()
        .map_err(err)?;
    let lik = Likelihood::gaussian(vec![d], 1.0).map_err(err)?;
    let res = meanfield_vi(&model, &lik, &MeanFieldConfig::default()).map_err(err)?;
    let mean_err = (res.state.mean.as_slice()[0] - d / 2.0).abs() / (d / 2.0);
    let std_err = (res.state.std()[0] - 0.5f64.sqrt()).abs() / 0.5f64.sqrt();

    let mgvi_out = execute(&preset_config("poisson_lognormal", Method::Mgvi, 0)?).map_err(err)?;
    let mf_out = execute(&preset_config("poisson_lognormal", Method::Meanfield, 0)?).map_err(err)?;
    let mut race = Vec::new();
    let mut faster = true;
    for (label, metric) in [
        ("samples", (|t: &mgvi_cli::outputs::TraceRow| t.pred_ll_samples) as fn(&_) -> f64),
        ("mean", |t: &mgvi_cli::outputs::TraceRow| t.pred_ll_mean),
    ] {
        let best = mf_out
            .trace
            .iter()
            .max_by(|a, b| metric(a).total_cmp(&metric(b)))
            .ok_or("empty mean-field trace")?;
        let reached = mgvi_out.trace.iter().find(|t| metric(t) >= metric(best));
        match reached {
            Some(t) => {
                faster &= t.wall_time_s < best.wall_time_s;
                race.push(format!(
                    "{label}: MGVI {:.3} s vs mean-field best {:.2} at {:.3} s",
                    t.wall_time_s,
                    metric(best),
                    best.wall_time_s
                ));
            }
            None => {
                faster = false;
                race.push(format!("{label}: MGVI never reaches {:.2}", metric(best)));
            }
        }
    }
    ensure(
        mean_err < 0.02 && std_err < 0.02 && faster,
        format!(
            "conjugate mean err {:.2}%, std err {:.2}% (< 2%); {}",
            100.0 * mean_err,
            100.0 * std_err,
            race.join("; ")
        ),
    )
}

fn gamma_transform() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, (shape, rate)) in [(1.0, 1.0), (2.0, 0.5), (0.5, 2.0)].into_iter().enumerate() {
        let mut xs: Vec<f64> = normals(9, k, 100_000)
            .into_iter()
            .map(|z| gamma_standardize(z, shape, rate))
            .collect::<mgvi::Result<_>>()
            .map_err(err)?;
        xs.sort_by(f64::total_cmp);
        let dist = Gamma::new(shape, rate).map_err(err)?;
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = dist.cdf(x);
                (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        ok &= ks < 0.01;
        lines.push(format!("Gamma({shape}, {rate}) {ks:.4}"));
    }
    ensure(ok, format!("KS distance (< 0.01): {}", lines.join(", ")))
}

fn run_cli(preset: &str, threads: usize, out: &Path) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_mgvi"))
        .args(["--threads", &threads.to_string(), "run", "--preset", preset, "--out"])
        .arg(out)
        .output()
        .map_err(err)?;
    if !status.status.success() {
        return Err(format!("{preset} with {threads} threads: {}", String::from_utf8_lossy(&status.stderr)));
    }
    std::fs::read(out.join("report.toml")).map_err(err)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut differing = Vec::new();
    for name in preset_names() {
        let one = run_cli(name, 1, &dir.path().join(format!("{name}_1")))?;
        let four = run_cli(name, 4, &dir.path().join(format!("{name}_4")))?;
        if one != four {
            differing.push(*name);
        }
    }
    ensure(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} presets, reports identical with 1 and 4 threads", preset_names().len())
        } else {
            format!("reports differ for {differing:?}")
        },
    )
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 11] = [
        ("linear_gaussian_exactness", linear_gaussian_exactness),
        ("prior_only_limit", prior_only_limit),
        ("dense_oracle_equivalence", dense_oracle_equivalence),
        ("gradient_fidelity", gradient_fidelity),
        ("truncation_safety", truncation_safety),
        ("antithetic_exactness", antithetic_exactness),
        ("calibration_band", calibration_band),
        ("binary_gp_desk_run", binary_gp_desk_run),
        ("meanfield_baseline", meanfield_baseline),
        ("gamma_transform", gamma_transform),
        ("determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
