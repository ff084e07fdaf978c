//! Unpreconditioned conjugate gradient for self-adjoint positive-definite operators.

use crate::error::{check_len, Error, Result};
use crate::linop::LinearOperator;
use crate::vector::{axpy, dot, norm, sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CGConfig {
    pub max_iterations: usize,
    pub relative_residual_tolerance: f64,
    pub absolute_residual_tolerance: f64,
}

impl CGConfig {
    /// A fixed iteration budget with no residual-based early exit.
    pub fn iterations(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            relative_residual_tolerance: 0.0,
            absolute_residual_tolerance: 0.0,
        }
    }

    pub fn tight(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            relative_residual_tolerance: 1e-12,
            absolute_residual_tolerance: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("CG needs at least one iteration".into()));
        }
        for (name, v) in [
            ("relative_residual_tolerance", self.relative_residual_tolerance),
            ("absolute_residual_tolerance", self.absolute_residual_tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("CG {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn threshold(&self, b_norm: f64) -> f64 {
        self.absolute_residual_tolerance
            .max(self.relative_residual_tolerance * b_norm)
    }
}

impl Default for CGConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_residual_tolerance: 1e-8,
            absolute_residual_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CGResult {
    pub solution: Vec<f64>,
    pub iterations_used: usize,
    /// True residual when converged, otherwise the recursively updated residual.
    pub final_residual_norm: f64,
    pub converged: bool,
}

pub fn cg_solve(op: &dyn LinearOperator, b: &[f64], x0: &[f64], cfg: &CGConfig) -> Result<CGResult> {
    cg_solve_monitored(op, b, x0, cfg, |_, _| {})
}

/// Like [`cg_solve`], calling `monitor(k, x_k)` after every iteration.
pub fn cg_solve_monitored<F>(
    op: &dyn LinearOperator,
    b: &[f64],
    x0: &[f64],
    cfg: &CGConfig,
    mut monitor: F,
) -> Result<CGResult>
where
    F: FnMut(usize, &[f64]),
{
    cfg.validate()?;
    let n = op.domain_dim();
    check_len("cg operator", n, op.codomain_dim())?;
    check_len("cg rhs", n, b.len())?;
    check_len("cg initial guess", n, x0.len())?;

    let threshold = cfg.threshold(norm(b));
    let mut x = x0.to_vec();
    let mut r = if x0.iter().all(|&v| v == 0.0) {
        b.to_vec()
    } else {
        sub(b, &op.matvec(&x))
    };
    let mut rs = dot(&r, &r);
    if !rs.is_finite() {
        return Err(breakdown(0, "non-finite initial residual"));
    }
    if rs.sqrt() <= threshold {
        return Ok(CGResult {
            solution: x,
            iterations_used: 0,
            final_residual_norm: rs.sqrt(),
            converged: true,
        });
    }
    let mut p = r.clone();

    for k in 1..=cfg.max_iterations {
        let ap = op.matvec(&p);
        let curvature = dot(&p, &ap);
        if !curvature.is_finite() {
            return Err(breakdown(k, "non-finite curvature"));
        }
        if curvature <= 0.0 {
            return Err(breakdown(k, &format!("non-positive curvature {curvature:e}")));
        }
        let alpha = rs / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let mut rs_new = dot(&r, &r);
        let mut restart = false;
        if !rs_new.is_finite() {
            return Err(breakdown(k, "non-finite residual"));
        }
        monitor(k, &x);

        if rs_new.sqrt() <= threshold {
            // Confirm against the true residual; the recursion drifts in finite precision.
            let true_r = sub(b, &op.matvec(&x));
            let true_norm = norm(&true_r);
            if true_norm <= threshold {
                return Ok(CGResult {
                    solution: x,
                    iterations_used: k,
                    final_residual_norm: true_norm,
                    converged: true,
                });
            }
            r = true_r;
            rs_new = true_norm * true_norm;
            restart = true;
        }
        if k == cfg.max_iterations {
            return Ok(CGResult {
                solution: x,
                iterations_used: k,
                final_residual_norm: rs_new.sqrt(),
                converged: false,
            });
        }

        // After swapping in the true residual the old direction is no longer conjugate.
        let beta = if restart { 0.0 } else { rs_new / rs };
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }
    unreachable!("loop returns on its final iteration")
}

fn breakdown(iteration: usize, reason: &str) -> Error {
    Error::NumericalBreakdown {
        iteration,
        reason: reason.to_string(),
    }
}
