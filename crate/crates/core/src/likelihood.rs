//! Data likelihoods with diagonal Fisher metrics.
//!
//! Energies drop θ-independent constants. Masked-out points contribute
//! nothing to the energy, gradient or metric.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::linop::{self, Operator};

pub const RATE_FLOOR: f64 = 1e-12;
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Gaussian { noise_variance: f64 },
    Poisson,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Likelihood {
    family: Family,
    values: Vec<f64>,
    mask: Vec<bool>,
}

fn clamp_probability(mu: f64) -> f64 {
    mu.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
}

impl Likelihood {
    pub fn new(family: Family, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        check_len("likelihood mask", values.len(), mask.len())?;
        match family {
            Family::Gaussian { noise_variance } => {
                if !(noise_variance > 0.0 && noise_variance.is_finite()) {
                    return Err(Error::Domain(format!("noise variance must be positive, got {noise_variance}")));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!("non-finite Gaussian datum at index {i}")));
                }
            }
            Family::Poisson => {
                if let Some(i) = values.iter().position(|&v| !(v >= 0.0 && v.fract() == 0.0 && v.is_finite())) {
                    return Err(Error::Domain(format!("Poisson datum at index {i} is not a count: {}", values[i])));
                }
            }
            Family::Bernoulli => {
                if let Some(i) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Domain(format!("Bernoulli datum at index {i} is not 0 or 1: {}", values[i])));
                }
            }
        }
        Ok(Self { family, values, mask })
    }

    pub fn gaussian(values: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(Family::Gaussian { noise_variance }, values, mask)
    }

    pub fn poisson(values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(Family::Poisson, values, mask)
    }

    pub fn bernoulli(values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(Family::Bernoulli, values, mask)
    }

    /// Same data with a different observation mask.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(self.family, self.values.clone(), mask)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        check_len("likelihood parameters", self.len(), theta.len())?;
        if let Some(i) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::Domain(format!("non-finite likelihood parameter at index {i}")));
        }
        Ok(())
    }

    fn point_energy(&self, d: f64, t: f64) -> f64 {
        match self.family {
            Family::Gaussian { noise_variance } => 0.5 * (d - t).powi(2) / noise_variance,
            Family::Poisson => {
                let lam = t.max(RATE_FLOOR);
                if d == 0.0 {
                    lam
                } else {
                    lam - d * lam.ln()
                }
            }
            Family::Bernoulli => {
                let mu = clamp_probability(t);
                if d == 1.0 {
                    -mu.ln()
                } else {
                    -(1.0 - mu).ln()
                }
            }
        }
    }

    fn point_gradient(&self, d: f64, t: f64) -> f64 {
        match self.family {
            Family::Gaussian { noise_variance } => (t - d) / noise_variance,
            Family::Poisson => {
                if t < RATE_FLOOR {
                    0.0
                } else {
                    1.0 - d / t
                }
            }
            Family::Bernoulli => {
                if clamp_probability(t) != t {
                    0.0
                } else if d == 1.0 {
                    -1.0 / t
                } else {
                    1.0 / (1.0 - t)
                }
            }
        }
    }

    fn point_metric(&self, t: f64) -> f64 {
        match self.family {
            Family::Gaussian { noise_variance } => 1.0 / noise_variance,
            Family::Poisson => 1.0 / t.max(RATE_FLOOR),
            Family::Bernoulli => {
                let mu = clamp_probability(t);
                1.0 / (mu * (1.0 - mu))
            }
        }
    }

    /// Per-point energies; masked-out points are 0.
    pub fn point_energies(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        Ok(self
            .values
            .iter()
            .zip(theta)
            .zip(&self.mask)
            .map(|((&d, &t), &m)| if m { self.point_energy(d, t) } else { 0.0 })
            .collect())
    }

    pub fn energy(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.point_energies(theta)?.iter().sum())
    }

    pub fn grad_energy(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        Ok(self
            .values
            .iter()
            .zip(theta)
            .zip(&self.mask)
            .map(|((&d, &t), &m)| if m { self.point_gradient(d, t) } else { 0.0 })
            .collect())
    }

    pub fn metric_diagonal(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        Ok(theta
            .iter()
            .zip(&self.mask)
            .map(|(&t, &m)| if m { self.point_metric(t) } else { 0.0 })
            .collect())
    }

    pub fn fisher_metric(&self, theta: &[f64]) -> Result<Operator> {
        linop::diagonal(self.metric_diagonal(theta)?)
    }

    /// Draw from `N(0, fisher_metric(θ))`.
    pub fn sample_metric_noise<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(noise_from_diagonal(&self.metric_diagonal(theta)?, rng))
    }

    /// Synthetic data from the likelihood at θ, same length as the dataset.
    pub fn simulate<R: Rng + ?Sized>(family: Family, theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        theta
            .iter()
            .map(|&t| {
                Ok(match family {
                    Family::Gaussian { noise_variance } => Normal::new(t, noise_variance.sqrt())
                        .map_err(|e| Error::Domain(e.to_string()))?
                        .sample(rng),
                    Family::Poisson => {
                        let lam = t.max(RATE_FLOOR);
                        Poisson::new(lam).map_err(|e| Error::Domain(e.to_string()))?.sample(rng)
                    }
                    Family::Bernoulli => f64::from(u8::from(rng.random::<f64>() < clamp_probability(t))),
                })
            })
            .collect()
    }
}

/// Independent normals with variances given by a metric diagonal; zero entries stay 0.
pub(crate) fn noise_from_diagonal<R: Rng + ?Sized>(diag: &[f64], rng: &mut R) -> Vec<f64> {
    diag.iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            if v == 0.0 {
                0.0
            } else {
                v.sqrt() * z
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::to_dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_gradient(l: &Likelihood, theta: &[f64], h: f64) -> Vec<f64> {
        (0..theta.len())
            .map(|i| {
                let mut p = theta.to_vec();
                let mut m = theta.to_vec();
                p[i] += h;
                m[i] -= h;
                (l.energy(&p).unwrap() - l.energy(&m).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn energy_examples() {
        assert_eq!(Likelihood::poisson(vec![0.0]).unwrap().energy(&[1.0]).unwrap(), 1.0);
        let b = Likelihood::bernoulli(vec![1.0]).unwrap().energy(&[0.5]).unwrap();
        assert!((b - std::f64::consts::LN_2).abs() < 1e-15);
        let g = Likelihood::gaussian(vec![0.3, -2.0], 1.5).unwrap();
        assert_eq!(g.energy(&[0.3, -2.0]).unwrap(), 0.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(Likelihood::poisson(vec![2.0]).unwrap().grad_energy(&[2.0]).unwrap(), vec![0.0]);
        assert_eq!(Likelihood::bernoulli(vec![1.0]).unwrap().grad_energy(&[0.5]).unwrap(), vec![-2.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..20 {
            let n = 6;
            let lam: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
            let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
            let gauss: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let cases = [
                (Likelihood::poisson((0..n).map(|i| (i % 4) as f64).collect()).unwrap(), lam),
                (Likelihood::bernoulli((0..n).map(|i| (i % 2) as f64).collect()).unwrap(), mu),
                (Likelihood::gaussian(vec![0.5; n], 0.7).unwrap(), gauss),
            ];
            for (l, theta) in &cases {
                let an = l.grad_energy(theta).unwrap();
                let fd = fd_gradient(l, theta, 1e-6);
                for (a, f) in an.iter().zip(&fd) {
                    assert!((a - f).abs() <= 1e-6 * a.abs().max(f.abs()).max(1.0), "{a} vs {f}");
                }
            }
        }
    }

    #[test]
    fn metric_examples() {
        let p = Likelihood::poisson(vec![0.0; 3]).unwrap();
        assert_eq!(p.metric_diagonal(&[1.0, 2.0, 4.0]).unwrap(), vec![1.0, 0.5, 0.25]);
        let b = Likelihood::bernoulli(vec![1.0]).unwrap();
        assert_eq!(to_dense(b.fisher_metric(&[0.5]).unwrap().as_ref(), 4).unwrap()[(0, 0)], 4.0);
        let g = Likelihood::gaussian(vec![0.0; 3], 2.0).unwrap();
        assert_eq!(g.metric_diagonal(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn masking_removes_points() {
        let l = Likelihood::poisson(vec![1.0, 3.0, 2.0]).unwrap();
        let masked = l.with_mask(vec![true, false, true]).unwrap();
        let theta = [1.5, 0.7, 2.2];
        let e = l.point_energies(&theta).unwrap();
        assert_eq!(masked.energy(&theta).unwrap(), e[0] + e[2]);
        assert_eq!(masked.grad_energy(&theta).unwrap()[1], 0.0);
        assert_eq!(masked.metric_diagonal(&theta).unwrap()[1], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            assert_eq!(masked.sample_metric_noise(&theta, &mut rng).unwrap()[1], 0.0);
        }
    }

    #[test]
    fn energy_is_sum_of_single_point_energies() {
        let l = Likelihood::bernoulli(vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let theta = [0.2, 0.4, 0.9, 0.6];
        let total = l.energy(&theta).unwrap();
        let parts: f64 = (0..4)
            .map(|i| Likelihood::bernoulli(vec![l.values()[i]]).unwrap().energy(&theta[i..=i]).unwrap())
            .sum();
        assert!((total - parts).abs() < 1e-14);
    }

    #[test]
    fn metric_noise_covariance_matches_diagonal() {
        let l = Likelihood::poisson(vec![0.0; 3]).unwrap();
        let theta = [1.0, 0.5, 4.0];
        let diag = l.metric_diagonal(&theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 100_000;
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let z = l.sample_metric_noise(&theta, &mut rng).unwrap();
            for i in 0..3 {
                sq[i] += z[i] * z[i];
            }
        }
        for i in 0..3 {
            let var = sq[i] / n as f64;
            assert!((var / diag[i] - 1.0).abs() < 0.03, "coord {i}: {var} vs {}", diag[i]);
        }
    }

    #[test]
    fn fisher_metric_is_expected_score_outer_product() {
        let theta = [0.8, 2.0, 5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let d = Likelihood::simulate(Family::Poisson, &theta, &mut rng).unwrap();
            let g = Likelihood::poisson(d).unwrap().grad_energy(&theta).unwrap();
            for i in 0..3 {
                acc[i] += g[i] * g[i];
            }
        }
        for i in 0..3 {
            let est = acc[i] / n as f64;
            assert!((est * theta[i] - 1.0).abs() < 0.05, "coord {i}: {est}");
        }
    }

    #[test]
    fn clamping_keeps_energy_finite() {
        let p = Likelihood::poisson(vec![3.0]).unwrap();
        assert!(p.energy(&[0.0]).unwrap().is_finite());
        let b = Likelihood::bernoulli(vec![1.0]).unwrap();
        assert!(b.energy(&[0.0]).unwrap().is_finite());
        assert!(b.metric_diagonal(&[1.0]).unwrap()[0].is_finite());
        assert!(p.energy(&[f64::NAN]).is_err());
    }

    #[test]
    fn invalid_data_rejected() {
        assert!(Likelihood::poisson(vec![1.5]).is_err());
        assert!(Likelihood::bernoulli(vec![2.0]).is_err());
        assert!(Likelihood::gaussian(vec![0.0], 0.0).is_err());
        assert!(Likelihood::new(Family::Poisson, vec![1.0], vec![]).is_err());
    }
}
