use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcgConfig {
    /// Stop once `|r_k| / |r_0| < tolerance`.
    pub tolerance: f64,
    /// Iteration cap; `None` means the system size.
    pub max_iters: Option<usize>,
}

impl Default for PcgConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            max_iters: None,
        }
    }
}

impl PcgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance > 0.0 && self.tolerance < 1.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "PCG tolerance must lie in (0, 1), got {}",
                self.tolerance
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `|r_k| / |r_0|`.
    pub residual: f64,
    pub converged: bool,
    /// `|r_k| / |r_0|` after each iteration.
    pub trace: Vec<f64>,
}

impl PcgOutcome {
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for `A x = b` with `A` and `M⁻¹`
/// given as operators.
///
/// Starts from `x₀ = M⁻¹b`, `r₀ = b - A x₀`, `p₀ = M⁻¹r₀` and runs the
/// classical recurrence. A run that hits the cap returns the last iterate
/// with `converged = false`; non-positive curvature `p'Ap ≤ 0` is an error.
pub fn pcg_solve(
    apply_a: impl Fn(&[f64]) -> Vec<f64>,
    apply_minv: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    cfg: &PcgConfig,
) -> Result<PcgOutcome> {
    cfg.validate()?;
    let n = b.len();
    let max_iters = cfg.max_iters.unwrap_or(n).max(1);

    let mut x = apply_minv(b);
    check_len(n, x.len())?;
    let ax = apply_a(&x);
    check_len(n, ax.len())?;
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let r0_norm = dot(&r, &r).sqrt();
    if r0_norm == 0.0 || !r0_norm.is_finite() {
        // Either the starting guess is exact (b = 0 included) or the
        // operators produced non-finite values.
        return if r0_norm == 0.0 {
            Ok(PcgOutcome {
                x,
                iterations: 0,
                residual: 0.0,
                converged: true,
                trace: Vec::new(),
            })
        } else {
            Err(Error::invalid("non-finite initial residual in PCG"))
        };
    }
    let mut z = apply_minv(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut trace = Vec::new();
    let mut rel = 1.0;

    for k in 1..=max_iters {
        let ap = apply_a(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::BreakdownZeroCurvature { curvature });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / r0_norm;
        trace.push(rel);
        if rel < cfg.tolerance {
            return Ok(PcgOutcome {
                x,
                iterations: k,
                residual: rel,
                converged: true,
                trace,
            });
        }
        z = apply_minv(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(PcgOutcome {
        x,
        iterations: max_iters,
        residual: rel,
        converged: false,
        trace,
    })
}
