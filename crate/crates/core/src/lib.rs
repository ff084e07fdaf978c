//! Metric Gaussian Variational Inference with matrix-free operators.
//!
//! Models are written in standardized coordinates, `θ = f(ξ)` with an a-priori
//! standard normal `ξ`. The posterior is approximated by a Gaussian whose
//! covariance is the inverse Fisher metric, never stored: samples are drawn
//! with conjugate gradient through the implicit metric operator.

pub mod baselines;
pub mod error;
pub mod latent;
pub mod likelihood;
pub mod linop;
pub mod metrics;
pub mod mgvi;
pub mod model;
pub mod problems;
pub mod rng;
pub mod solver;
pub mod vector;

pub use error::{Error, Result};
pub use latent::{LatentVector, Layout};
pub use likelihood::{Family, Likelihood};
pub use linop::{LinearOperator, Operator};
pub use mgvi::{ApproximatePosterior, MGVIConfig, Schedule};
pub use model::StandardizedModel;
pub use solver::{cg_solve, CGConfig, CGResult};
