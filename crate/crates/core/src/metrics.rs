//! Reconstruction and predictive performance metrics.

use crate::error::{check_len, Error, Result};
use crate::latent::LatentVector;
use crate::likelihood::Likelihood;
use crate::model::StandardizedModel;
use crate::problems::BuiltProblem;

/// Scores of one sample set. `rms` needs a known truth; `avg_significance`
/// additionally needs a positive sample spread everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rms: Option<f64>,
    pub avg_significance: Option<f64>,
    pub predictive_log_likelihood_samples: f64,
    pub predictive_log_likelihood_mean: f64,
    pub n_samples: usize,
    pub wall_time_s: f64,
}

/// Scores a sample set on a problem: signal moments against the truth and
/// the held-out predictive likelihood.
pub fn evaluate(problem: &BuiltProblem, samples: &[LatentVector], wall_time_s: f64) -> Result<EvaluationReport> {
    let (pred_samples, pred_mean) = predictive_likelihood(&problem.heldout, &problem.model, samples)?;
    let signals: Vec<Vec<f64>> = samples.iter().map(|s| problem.signal.forward(s)).collect::<Result<_>>()?;
    let (mean, std) = sample_moments(&signals)?;
    let (rms_value, significance) = match &problem.truth_signal {
        Some(truth) => {
            let r = rms(truth, &mean)?;
            let a = if std.iter().all(|&s| s > 0.0) {
                Some(avg_significance(truth, &mean, &std)?)
            } else {
                None
            };
            (Some(r), a)
        }
        None => (None, None),
    };
    Ok(EvaluationReport {
        rms: rms_value,
        avg_significance: significance,
        predictive_log_likelihood_samples: pred_samples,
        predictive_log_likelihood_mean: pred_mean,
        n_samples: samples.len(),
        wall_time_s,
    })
}

pub fn rms(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len("rms", truth.len(), estimate.len())?;
    if truth.is_empty() {
        return Err(Error::Domain("rms of empty arrays".into()));
    }
    let sq: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e).powi(2)).sum();
    Ok((sq / truth.len() as f64).sqrt())
}

/// Mean absolute residual in units of the predicted standard deviation.
pub fn avg_significance(truth: &[f64], estimate: &[f64], std: &[f64]) -> Result<f64> {
    check_len("avg_significance estimate", truth.len(), estimate.len())?;
    check_len("avg_significance std", truth.len(), std.len())?;
    if truth.is_empty() {
        return Err(Error::Domain("average significance of empty arrays".into()));
    }
    if let Some(i) = std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Domain(format!("standard deviation at index {i} is not positive: {}", std[i])));
    }
    let total: f64 = truth
        .iter()
        .zip(estimate)
        .zip(std)
        .map(|((t, e), s)| (t - e).abs() / s)
        .sum();
    Ok(total / truth.len() as f64)
}

/// `ln((1/N) Σ exp(ℓᵢ))` with max-shift stabilization.
pub fn log_mean_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("log-mean-exp of no values".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(max);
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + (s / values.len() as f64).ln())
}

/// Held-out log-likelihood averaged over posterior samples, and at their mean.
pub fn predictive_likelihood(
    heldout: &Likelihood,
    model: &StandardizedModel,
    samples: &[LatentVector],
) -> Result<(f64, f64)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Domain("predictive likelihood needs at least one sample".into()))?;
    let per_sample: Vec<f64> = samples
        .iter()
        .map(|s| Ok(-heldout.energy(&model.forward(s)?)?))
        .collect::<Result<_>>()?;
    let dim = first.total_dim();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.as_slice()) {
            *m += v;
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let at_mean = -heldout.energy(&model.forward(&first.with_values(mean)?)?)?;
    Ok((log_mean_exp(&per_sample)?, at_mean))
}

/// Per-coordinate mean and standard deviation of mapped samples.
pub fn sample_moments(values: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = values
        .first()
        .ok_or_else(|| Error::Domain("moments of an empty sample set".into()))?;
    let n = values.len() as f64;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for v in values {
        check_len("sample moments", dim, v.len())?;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; dim];
    for v in values {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    Ok((mean, var.into_iter().map(f64::sqrt).collect()))
}
