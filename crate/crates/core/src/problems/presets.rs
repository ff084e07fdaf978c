//! Shipped problem instances with method settings that run unmodified.

use crate::baselines::{LaplaceConfig, MapConfig, MeanFieldConfig};
use crate::mgvi::{MGVIConfig, NaturalGradientConfig, Schedule};
use crate::solver::CGConfig;

use super::{
    BinaryGpSpec, LinearGaussianSpec, LogisticData, LogisticSpec, NmfSpec, PoissonLognormalSpec, ProblemKind,
    ProblemSpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub problem: ProblemSpec,
    pub mgvi: MGVIConfig,
    pub map: MapConfig,
    pub laplace: LaplaceConfig,
    pub meanfield: MeanFieldConfig,
}

const NAMES: [&str; 6] = [
    "poisson_lognormal",
    "binary_gp",
    "gamma_poisson_nmf",
    "logistic_regression",
    "linear_gaussian",
    "zero_data",
];

pub fn preset_names() -> &'static [&'static str] {
    &NAMES
}

/// One pair and `steps` natural-gradient steps until iteration `ramp_start`,
/// then one more pair and step per iteration for eleven iterations while the
/// sampling CG budget grows geometrically from `cg_start` to `cg_end`.
fn ramped(global_iterations: usize, steps: usize, ramp_start: usize, cg_start: usize, cg_end: usize) -> MGVIConfig {
    let ramp = 0..=10usize;
    let samples = std::iter::once((0, 1)).chain(ramp.clone().map(|j| (ramp_start + j, 2 + j)));
    let ng = std::iter::once((0, steps)).chain(ramp.clone().map(|j| (ramp_start + j, steps + 1 + j)));
    let ratio = cg_end as f64 / cg_start as f64;
    let cg = std::iter::once((0, CGConfig::iterations(cg_start))).chain(ramp.map(|j| {
        let n = (cg_start as f64 * ratio.powf((j + 1) as f64 / 11.0)).round() as usize;
        (ramp_start + j, CGConfig::iterations(n))
    }));
    MGVIConfig {
        global_iterations,
        samples: Schedule::new(samples.collect()).expect("ordered schedule"),
        sampling_cg: Schedule::new(cg.collect()).expect("ordered schedule"),
        natural_gradient_steps: Schedule::new(ng.collect()).expect("ordered schedule"),
        natural_gradient: NaturalGradientConfig {
            cg: CGConfig {
                max_iterations: 100,
                relative_residual_tolerance: 1e-6,
                absolute_residual_tolerance: 0.0,
            },
            ..NaturalGradientConfig::default()
        },
        ..MGVIConfig::default()
    }
}

fn tight_natural_gradient() -> NaturalGradientConfig {
    NaturalGradientConfig {
        cg: CGConfig::tight(500),
        ..NaturalGradientConfig::default()
    }
}

pub fn preset(name: &str) -> Option<Preset> {
    let spec = |kind, holdout_fraction| ProblemSpec {
        kind,
        holdout_fraction,
        seed: 0,
    };
    Some(match name {
        "poisson_lognormal" => Preset {
            name: "poisson_lognormal",
            description: "1-D Poisson log-normal field, 128 points, squared-exponential kernel, 10% held out",
            problem: spec(ProblemKind::PoissonLognormal(PoissonLognormalSpec::default()), 0.1),
            mgvi: ramped(35, 3, 20, 25, 100),
            map: MapConfig::default(),
            laplace: LaplaceConfig::default(),
            meanfield: MeanFieldConfig::default(),
        },
        "binary_gp" => Preset {
            name: "binary_gp",
            description: "128x128 binary GP classification with learned spectrum, checkerboard observations",
            problem: spec(ProblemKind::BinaryGp(BinaryGpSpec::default()), 0.0),
            mgvi: MGVIConfig {
                global_iterations: 20,
                samples: Schedule::constant(2),
                sampling_cg: Schedule::constant(CGConfig::iterations(30)),
                natural_gradient_steps: Schedule::constant(5),
                natural_gradient: NaturalGradientConfig {
                    cg: CGConfig::iterations(50),
                    ..NaturalGradientConfig::default()
                },
                ..MGVIConfig::default()
            },
            map: MapConfig {
                max_steps: 50,
                natural_gradient: NaturalGradientConfig {
                    cg: CGConfig::iterations(50),
                    ..NaturalGradientConfig::default()
                },
                ..MapConfig::default()
            },
            laplace: LaplaceConfig {
                cg: CGConfig::iterations(30),
                ..LaplaceConfig::default()
            },
            meanfield: MeanFieldConfig {
                steps: 5000,
                ..MeanFieldConfig::default()
            },
        },
        "gamma_poisson_nmf" => Preset {
            name: "gamma_poisson_nmf",
            description: "50 frames x 64 pixels x 3 components Gamma-Poisson factorization, 10% pixels and half a frame masked",
            problem: spec(ProblemKind::Nmf(NmfSpec::default()), 0.1),
            mgvi: ramped(35, 10, 20, 50, 200),
            map: MapConfig::default(),
            laplace: LaplaceConfig::default(),
            meanfield: MeanFieldConfig::default(),
        },
        "logistic_regression" => Preset {
            name: "logistic_regression",
            description: "hierarchical logistic regression on synthetic polls: intercept, gender, ethnicity, 20 states",
            problem: spec(ProblemKind::LogisticRegression(LogisticSpec::default(), LogisticData::Synthetic), 0.1),
            mgvi: ramped(35, 3, 20, 25, 100),
            map: MapConfig::default(),
            laplace: LaplaceConfig::default(),
            meanfield: MeanFieldConfig::default(),
        },
        "linear_gaussian" => Preset {
            name: "linear_gaussian",
            description: "32-dim linear Gaussian model with closed-form posterior",
            problem: spec(ProblemKind::LinearGaussian(LinearGaussianSpec::default()), 0.0),
            mgvi: MGVIConfig {
                global_iterations: 5,
                sampling_cg: Schedule::constant(CGConfig::tight(500)),
                natural_gradient: tight_natural_gradient(),
                ..MGVIConfig::default()
            },
            map: MapConfig {
                natural_gradient: tight_natural_gradient(),
                ..MapConfig::default()
            },
            laplace: LaplaceConfig {
                cg: CGConfig::tight(500),
                ..LaplaceConfig::default()
            },
            meanfield: MeanFieldConfig::default(),
        },
        "zero_data" => Preset {
            name: "zero_data",
            description: "linear Gaussian model with every data point masked (prior only)",
            problem: spec(
                ProblemKind::ZeroData(LinearGaussianSpec {
                    dim: 16,
                    n_data: 16,
                    noise_variance: 1.0,
                }),
                0.0,
            ),
            mgvi: MGVIConfig {
                global_iterations: 5,
                sampling_cg: Schedule::constant(CGConfig::tight(100)),
                natural_gradient: tight_natural_gradient(),
                ..MGVIConfig::default()
            },
            map: MapConfig {
                natural_gradient: tight_natural_gradient(),
                ..MapConfig::default()
            },
            laplace: LaplaceConfig::default(),
            meanfield: MeanFieldConfig::default(),
        },
        _ => return None,
    })
}
