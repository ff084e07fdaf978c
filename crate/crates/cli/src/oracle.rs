//! Dense-materialization checks on small instances of every shipped problem.

use std::fmt;

use mgvi::linop::{self, adjoint_mismatch, to_dense};
use mgvi::mgvi::{build_metric, draw_residual_sample, MetricParts};
use mgvi::model::Linear;
use mgvi::problems::{
    BinaryGpSpec, LinearGaussianSpec, LogisticData, LogisticSpec, NmfSpec, PoissonLognormalSpec, ProblemKind,
    ProblemSpec,
};
use mgvi::rng::sample_stream;
use mgvi::{cg_solve, CGConfig, LatentVector, Layout, Likelihood, StandardizedModel};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{CliError, Result};

pub const ADJOINT_LIMIT: f64 = 1e-12;
pub const ASYMMETRY_LIMIT: f64 = 1e-12;
pub const MIN_EIGENVALUE: f64 = 1.0 - 1e-10;
pub const CG_LIMIT: f64 = 1e-8;
pub const COVARIANCE_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub dim_cap: usize,
    pub draws: usize,
    pub seed: u64,
    /// Adds an instance whose adjoint has a flipped sign.
    pub self_test: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            dim_cap: 16,
            draws: 20_000,
            seed: 0,
            self_test: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub instance: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub rows: Vec<CheckRow>,
    /// Families with no instance small enough for the cap.
    pub skipped: Vec<String>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<18} {:<34} {:>12} {:>12}", "result", "check", "instance", "value", "limit")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<6} {:<18} {:<34} {:>12.3e} {:>12.3e}",
                if r.pass { "PASS" } else { "FAIL" },
                r.check,
                r.instance,
                r.value,
                r.limit
            )?;
        }
        for s in &self.skipped {
            writeln!(f, "SKIP   {s}: no instance fits the dimension cap")?;
        }
        Ok(())
    }
}

struct Instance {
    name: String,
    model: StandardizedModel,
    likelihood: Likelihood,
}

fn small_specs(family: &str) -> Vec<ProblemKind> {
    match family {
        "poisson_lognormal" => [16, 8, 4, 2]
            .map(|n| {
                ProblemKind::PoissonLognormal(PoissonLognormalSpec {
                    n_points: n,
                    length: 0.2,
                    ..PoissonLognormalSpec::default()
                })
            })
            .to_vec(),
        "binary_gp" => [(4, 2, 4), (2, 1, 4), (2, 1, 2)]
            .map(|(side, tile, n_tau)| {
                let mut s = BinaryGpSpec {
                    side,
                    tile,
                    ..BinaryGpSpec::default()
                };
                s.priors.n_tau = n_tau;
                ProblemKind::BinaryGp(s)
            })
            .to_vec(),
        "gamma_poisson_nmf" => [(2, 4, 2), (2, 3, 2), (1, 2, 1)]
            .map(|(f, p, c)| {
                ProblemKind::Nmf(NmfSpec {
                    n_frames: f,
                    n_pixels: p,
                    n_components: c,
                    masked_frame: None,
                    ..NmfSpec::default()
                })
            })
            .to_vec(),
        "logistic_regression" => [8, 3, 1]
            .map(|s| {
                ProblemKind::LogisticRegression(
                    LogisticSpec {
                        n_records: 60,
                        n_states: s,
                        ..LogisticSpec::default()
                    },
                    LogisticData::Synthetic,
                )
            })
            .to_vec(),
        _ => Vec::new(),
    }
}

const FAMILIES: [&str; 5] = [
    "poisson_lognormal",
    "binary_gp",
    "gamma_poisson_nmf",
    "logistic_regression",
    "linear_gaussian",
];

/// Largest shipped-problem instance of each family with dimension ≤ `cap`.
fn instances(cap: usize, seed: u64, skipped: &mut Vec<String>) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for family in FAMILIES {
        let kinds = if family == "linear_gaussian" {
            vec![ProblemKind::LinearGaussian(LinearGaussianSpec {
                dim: cap,
                n_data: cap + cap / 2,
                noise_variance: 0.1,
            })]
        } else {
            small_specs(family)
        };
        let mut found = false;
        for kind in kinds {
            let spec = ProblemSpec {
                kind,
                holdout_fraction: 0.0,
                seed,
            };
            let built = spec.build()?;
            if built.dim() <= cap {
                out.push(Instance {
                    name: format!("{family}(dim {})", built.dim()),
                    model: built.model,
                    likelihood: built.likelihood,
                });
                found = true;
                break;
            }
        }
        if !found {
            skipped.push(family.to_string());
        }
    }
    Ok(out)
}

/// Linear-Gaussian model whose response operator returns `−Rᵀy` as its adjoint.
fn broken_instance(dim: usize, seed: u64) -> Result<Instance> {
    let n_data = dim + 2;
    let mut rng = sample_stream(seed, usize::MAX >> 32, 1);
    let r = DMatrix::from_fn(n_data, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (rf, ra) = (r.clone(), r.clone());
    let op = linop::external(
        dim,
        n_data,
        move |x| (&rf * DVector::from_column_slice(x)).as_slice().to_vec(),
        move |y| (-(ra.transpose() * DVector::from_column_slice(y))).as_slice().to_vec(),
    )?;
    let model = StandardizedModel::builder(Layout::flat("xi", dim)?).then(Linear::new(op)).build()?;
    let data = (0..n_data).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Instance {
        name: format!("self_test_flipped_adjoint(dim {dim})"),
        model,
        likelihood: Likelihood::gaussian(data, 1.0)?,
    })
}

fn normals(seed: u64, index: usize, n: usize) -> Vec<f64> {
    let mut rng = sample_stream(seed, usize::MAX >> 32, index);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn row(check: &'static str, inst: &Instance, value: f64, limit: f64, pass: bool) -> CheckRow {
    CheckRow {
        check,
        instance: inst.name.clone(),
        value,
        limit,
        pass,
    }
}

/// Upper limits pass when `value <= limit`; NaN never passes.
fn below(check: &'static str, inst: &Instance, value: f64, limit: f64) -> CheckRow {
    row(check, inst, value, limit, value <= limit)
}

fn check_instance(inst: &Instance, opts: &OracleOptions, cap: usize) -> Result<Vec<CheckRow>> {
    let dim = inst.model.input_dim();
    let layout = inst.model.layout().clone();
    let xi = LatentVector::from_values(&layout, normals(opts.seed, 10, dim))?;
    let mut rows = Vec::new();

    let jac = inst.model.jacobian_operator(&xi)?;
    let x = normals(opts.seed, 11, jac.codomain_dim());
    let y = normals(opts.seed, 12, dim);
    rows.push(below("adjoint", inst, adjoint_mismatch(&*jac, &x, &y)?, ADJOINT_LIMIT));

    let metric = build_metric(&inst.model, &inst.likelihood, &xi)?;
    let dense = to_dense(&*metric, cap)?;
    let asym = (&dense - dense.transpose()).abs().max();
    rows.push(below("metric_symmetry", inst, asym, ASYMMETRY_LIMIT));

    let sym = (&dense + dense.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    rows.push(row("metric_min_eig", inst, min_eig, MIN_EIGENVALUE, min_eig >= MIN_EIGENVALUE));

    let b = normals(opts.seed, 13, dim);
    let cg = CGConfig {
        max_iterations: 20 * dim,
        relative_residual_tolerance: 1e-14,
        absolute_residual_tolerance: 0.0,
    };
    let solved = cg_solve(&*metric, &b, &vec![0.0; dim], &cg).ok();
    let direct = dense.clone().lu().solve(&DVector::from_column_slice(&b));
    let cg_err = match (&solved, &direct) {
        (Some(s), Some(d)) => s
            .solution
            .iter()
            .zip(d.iter())
            .map(|(a, e)| (a - e).abs())
            .fold(0.0, f64::max),
        _ => f64::INFINITY,
    };
    rows.push(below("cg_vs_dense", inst, cg_err, CG_LIMIT));

    if opts.draws > 0 {
        let z = match sym.clone().try_inverse() {
            Some(cov) if min_eig > 0.0 => {
                let parts = MetricParts::at(&inst.model, &inst.likelihood, xi.as_slice())?;
                let draws = (0..opts.draws)
                    .into_par_iter()
                    .map(|k| {
                        let mut rng = sample_stream(opts.seed, 0, k);
                        draw_residual_sample(&parts, &cg, &mut rng).map(|d| d.sample)
                    })
                    .collect::<mgvi::Result<Vec<_>>>();
                draws.map_or(f64::INFINITY, |d| covariance_z_score(&d, &cov))
            }
            _ => f64::INFINITY,
        };
        rows.push(below("sample_covariance", inst, z, COVARIANCE_SIGMAS));
    }
    Ok(rows)
}

/// Largest `|Σ̂ᵢⱼ − Σᵢⱼ| / SEᵢⱼ` over all entries, for zero-mean draws with
/// `Σ̂ = (1/N) Σ x xᵀ` and `SEᵢⱼ² = (ΣᵢᵢΣⱼⱼ + Σᵢⱼ²) / N`.
pub fn covariance_z_score(draws: &[Vec<f64>], cov: &DMatrix<f64>) -> f64 {
    let n = cov.nrows();
    let count = draws.len() as f64;
    let mut emp = DMatrix::<f64>::zeros(n, n);
    for d in draws {
        let v = DVector::from_column_slice(d);
        emp += &v * v.transpose();
    }
    emp /= count;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / count).sqrt();
            let z = (emp[(i, j)] - cov[(i, j)]).abs() / se;
            worst = if z.is_nan() { f64::NAN } else { worst.max(z) };
            if worst.is_nan() {
                return worst;
            }
        }
    }
    worst
}

pub fn run_oracle_suite(opts: &OracleOptions) -> Result<OracleReport> {
    let cap = linop::dense_cap();
    if opts.dim_cap > cap {
        return Err(CliError::config(format!(
            "oracle dimension {} exceeds the dense cap {cap} (set MGVI_DENSE_CAP to raise it)",
            opts.dim_cap
        )));
    }
    if opts.dim_cap == 0 {
        return Err(CliError::config("oracle dimension must be positive"));
    }
    let mut report = OracleReport::default();
    let mut list = instances(opts.dim_cap, opts.seed, &mut report.skipped)?;
    if opts.self_test {
        list.push(broken_instance(opts.dim_cap.min(6), opts.seed)?);
    }
    for inst in &list {
        report.rows.extend(check_instance(inst, opts, cap)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(self_test: bool) -> OracleOptions {
        OracleOptions {
            draws: 4000,
            self_test,
            ..OracleOptions::default()
        }
    }

    #[test]
    fn every_family_fits_the_default_cap() {
        let mut skipped = Vec::new();
        let list = instances(16, 0, &mut skipped).unwrap();
        assert!(skipped.is_empty(), "{skipped:?}");
        assert_eq!(list.len(), FAMILIES.len());
        assert!(list.iter().all(|i| i.model.input_dim() <= 16));
    }

    #[test]
    fn default_suite_passes() {
        let report = run_oracle_suite(&quick(false)).unwrap();
        assert!(report.all_passed(), "{report}");
        assert_eq!(report.rows.len(), 5 * FAMILIES.len());
    }

    #[test]
    fn flipped_adjoint_is_caught() {
        let report = run_oracle_suite(&quick(true)).unwrap();
        assert!(!report.all_passed());
        let failed: Vec<&str> = report.failures().map(|r| r.check).collect();
        assert!(failed.contains(&"adjoint"), "{report}");
        assert!(report.failures().all(|r| r.instance.starts_with("self_test")), "{report}");
        assert!(report.to_string().contains("FAIL"));
    }

    #[test]
    fn tiny_cap_skips_families_that_cannot_shrink() {
        let report = run_oracle_suite(&OracleOptions {
            dim_cap: 3,
            draws: 500,
            ..OracleOptions::default()
        })
        .unwrap();
        assert!(report.all_passed(), "{report}");
        assert!(report.to_string().contains("SKIP") || report.skipped.is_empty());
    }

    #[test]
    fn z_score_detects_a_wrong_covariance() {
        let cov = DMatrix::<f64>::identity(2, 2);
        let draws: Vec<Vec<f64>> = (0..4000).map(|k| normals(1, k, 2)).collect();
        assert!(covariance_z_score(&draws, &cov) < 5.0);
        let scaled: Vec<Vec<f64>> = draws.iter().map(|d| d.iter().map(|v| 1.3 * v).collect()).collect();
        assert!(covariance_z_score(&scaled, &cov) > 5.0);
    }
}
