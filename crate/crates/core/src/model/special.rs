//! Distributional transforms: standard normal CDF and its inverse, and the
//! Gamma standardization `F⁻¹_Gamma ∘ Φ` with its derivative.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// 1 − Φ(x), accurate in the upper tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Φ⁻¹(p) for p in the open unit interval.
pub fn norm_ppf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("inverse normal CDF needs p in (0,1), got {p}")));
    }
    // Acklam's rational approximation, then two Halley refinements against erfc.
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549671010243091e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let mut x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        // Work in the smaller tail to keep relative accuracy.
        let e = if p < 0.5 {
            norm_cdf(x) - p
        } else {
            (1.0 - p) - norm_sf(x)
        };
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

pub fn ln_gamma(a: f64) -> f64 {
    libm::lgamma(a)
}

/// Regularized incomplete gamma functions `(P(a, x), Q(a, x))`, each computed
/// directly in the regime where it is accurate.
pub fn regularized_gamma(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // Series: P = e^{-x} x^a / Γ(a+1) Σ x^n / ((a+1)…(a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        let p = (log_prefactor + sum.ln()).exp().min(1.0);
        (p, 1.0 - p)
    } else {
        // Continued fraction for Q (modified Lentz).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (log_prefactor + h.ln()).exp().min(1.0);
        (1.0 - q, q)
    }
}

/// Gamma(shape α, rate β) CDF.
pub fn gamma_cdf(x: f64, shape: f64, rate: f64) -> f64 {
    regularized_gamma(shape, rate * x).0
}

pub fn gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape)).exp()
}

fn check_gamma_params(shape: f64, rate: f64) -> Result<()> {
    if shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "Gamma parameters must be positive, got shape {shape}, rate {rate}"
        )))
    }
}

/// `x` with `F_Gamma(x; α, β) = Φ(ξ)`.
///
/// Solves in the unit-rate variable `y = βx` on `t = ln y` with safeguarded
/// Newton steps, matching the lower tail for ξ ≤ 0 and the upper tail otherwise.
pub fn gamma_standardize(xi: f64, shape: f64, rate: f64) -> Result<f64> {
    check_gamma_params(shape, rate)?;
    if !xi.is_finite() {
        return Err(Error::Domain(format!("gamma standardization of non-finite {xi}")));
    }
    let lower = xi <= 0.0;
    let target = if lower { norm_cdf(xi) } else { norm_sf(xi) };
    if target <= 0.0 {
        return Err(Error::Domain(format!("normal tail underflows at ξ = {xi}")));
    }
    // g(t) is increasing in t for both tails after the sign flip.
    let g = |t: f64| -> f64 {
        let (p, q) = regularized_gamma(shape, t.exp());
        if lower {
            p - target
        } else {
            target - q
        }
    };
    let dg = |t: f64| -> f64 {
        let y = t.exp();
        gamma_pdf(y, shape, 1.0) * y
    };

    let mut lo = (1e-300f64).ln();
    let mut hi = (shape + 20.0 * shape.sqrt()).ln();
    let mut expansions = 0;
    while g(hi) < 0.0 {
        hi += std::f64::consts::LN_2 * 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::Domain(format!(
                "gamma inverse CDF failed to bracket ξ = {xi}, shape {shape}"
            )));
        }
    }
    if g(lo) > 0.0 {
        return Err(Error::Domain(format!(
            "gamma inverse CDF failed to bracket ξ = {xi}, shape {shape}"
        )));
    }

    let mut t = initial_guess(xi, shape).ln().clamp(lo, hi);
    for _ in 0..200 {
        let gt = g(t);
        if gt == 0.0 {
            break;
        }
        if gt < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let slope = dg(t);
        let mut next = t - gt / slope;
        if !(next.is_finite() && next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - t).abs() <= 1e-15 * t.abs().max(1.0) || hi - lo <= 1e-15 * hi.abs().max(1.0);
        t = next;
        if done {
            break;
        }
    }
    Ok(t.exp() / rate)
}

fn initial_guess(xi: f64, shape: f64) -> f64 {
    // Wilson–Hilferty, with a small-value fallback from P(a, y) ≈ y^a / Γ(a+1).
    let c = 1.0 / (9.0 * shape);
    let wh = shape * (1.0 - c + xi * c.sqrt()).powi(3);
    if wh > 1e-3 * shape {
        wh
    } else {
        let p = norm_cdf(xi).max(1e-300);
        ((p.ln() + ln_gamma(shape + 1.0)) / shape).exp().max(1e-300)
    }
}

/// `dx/dξ = φ(ξ) / gamma_pdf(x)` at `x = gamma_standardize(ξ)`.
pub fn gamma_standardize_derivative(xi: f64, x: f64, shape: f64, rate: f64) -> f64 {
    norm_pdf(xi) / gamma_pdf(x, shape, rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Gamma};

    /// Φ from the Taylor series of erf, summed with compensated terms; slow but
    /// independent of libm.
    fn series_cdf(x: f64) -> f64 {
        let z = x / SQRT_2;
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        while term.abs() > 1e-18 {
            n += 1.0;
            term *= -z * z / n;
            sum += term / (2.0 * n + 1.0);
        }
        0.5 + sum / PI.sqrt()
    }

    #[test]
    fn cdf_symmetry_and_center() {
        assert_eq!(norm_cdf(0.0), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x: f64 = rng.random_range(-8.0..8.0);
            assert!((norm_cdf(x) + norm_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cdf_matches_series_oracle() {
        assert!((norm_cdf(1.0) - series_cdf(1.0)).abs() < 1e-12);
        for x in [-2.5, -1.0, -0.3, 0.7, 1.0, 2.2, 3.0] {
            assert!((norm_cdf(x) - series_cdf(x)).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn ppf_round_trip() {
        let mut x = -6.0;
        while x <= 6.0 {
            let back = norm_ppf(norm_cdf(x)).unwrap();
            assert!((back - x).abs() < 1e-8, "{x} -> {back}");
            x += 0.01;
        }
        assert!(norm_ppf(0.0).is_err());
        assert!(norm_ppf(1.0).is_err());
        assert!(norm_ppf(f64::NAN).is_err());
    }

    #[test]
    fn exponential_median() {
        let x = gamma_standardize(0.0, 1.0, 1.0).unwrap();
        assert!((x - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gamma_standardize_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let (a, b): (f64, f64) = (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
            let shape = rng.random_range(0.2..5.0);
            let rate = rng.random_range(0.2..5.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if hi - lo < 1e-6 {
                continue;
            }
            assert!(gamma_standardize(lo, shape, rate).unwrap() < gamma_standardize(hi, shape, rate).unwrap());
        }
    }

    #[test]
    fn incomplete_gamma_agrees_with_statrs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let shape = rng.random_range(0.1..10.0);
            let x = rng.random_range(0.0..30.0);
            let oracle = Gamma::new(shape, 1.0).unwrap().cdf(x);
            assert!((gamma_cdf(x, shape, 1.0) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_in_cdf_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let xi = rng.random_range(-8.0..8.0);
            let shape = rng.random_range(0.2..6.0);
            let rate = rng.random_range(0.2..6.0);
            let x = gamma_standardize(xi, shape, rate).unwrap();
            let dist = Gamma::new(shape, rate).unwrap();
            let (cdf, target) = (dist.cdf(x), norm_cdf(xi));
            assert!((cdf - target).abs() < 1e-9, "ξ={xi} α={shape} β={rate}: {cdf} vs {target}");
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for &(xi, shape, rate) in &[(0.3, 1.0, 1.0), (-1.2, 2.0, 0.5), (2.0, 0.5, 2.0)] {
            let x = gamma_standardize(xi, shape, rate).unwrap();
            let h = 1e-5;
            let fd = (gamma_standardize(xi + h, shape, rate).unwrap()
                - gamma_standardize(xi - h, shape, rate).unwrap())
                / (2.0 * h);
            let an = gamma_standardize_derivative(xi, x, shape, rate);
            assert!((fd - an).abs() / an.abs() < 1e-6, "{fd} vs {an}");
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(gamma_standardize(0.0, -1.0, 1.0).is_err());
        assert!(gamma_standardize(0.0, 1.0, 0.0).is_err());
        assert!(gamma_standardize(f64::INFINITY, 1.0, 1.0).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn standardized_gamma_preserves_quantiles(xi in -6.0f64..6.0, shape in 0.3f64..8.0, rate in 0.2f64..5.0) {
                let x = gamma_standardize(xi, shape, rate).unwrap();
                let dist = Gamma::new(shape, rate).unwrap();
                let (p, q) = (norm_cdf(xi), norm_sf(xi));
                if xi <= 0.0 {
                    prop_assert!((dist.cdf(x) - p).abs() <= 1e-9 * p.max(1e-12));
                } else {
                    prop_assert!((dist.sf(x) - q).abs() <= 1e-9 * q.max(1e-12));
                }
            }

            #[test]
            fn standardized_gamma_is_increasing(xi in -6.0f64..6.0, step in 1e-3f64..1.0, shape in 0.3f64..8.0, rate in 0.2f64..5.0) {
                let lo = gamma_standardize(xi, shape, rate).unwrap();
                let hi = gamma_standardize(xi + step, shape, rate).unwrap();
                prop_assert!(hi > lo);
                prop_assert!(gamma_standardize_derivative(xi, lo, shape, rate) > 0.0);
            }
        }
    }
}
