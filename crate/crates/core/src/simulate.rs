//! Unconditional and conditional simulation on the embedding torus.
//!
//! Conditional draws use substitution sampling: draw `Z̃ ~ N(μ1, σ²C)`
//! unconditionally, solve `C_oo x = z_o − Z̃_o`, and set
//! `Z*_u = Z̃_u + C_uo x`. The solve works with the correlation matrix, so
//! `σ²` cancels and never enters the preconditioner.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::bccb::EigenSpectrum;
use crate::covariance::{ParamSet, Theta};
use crate::error::{check_len, Error, Result};
use crate::lattice::ObservationMask;
use crate::solver::{solve_observed, PcgConfig, Preconditioner};

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDraw {
    /// Values at the unobserved sites, in mask order.
    pub z_u: Vec<f64>,
    pub solver_iters: usize,
    pub residual: f64,
    pub converged: bool,
}

impl ConditionalDraw {
    /// The complete field with `z_o` at the observed sites.
    pub fn field(&self, mask: &ObservationMask, z_o: &[f64]) -> Vec<f64> {
        mask.assemble(z_o, &self.z_u)
    }
}

/// Two independent zero-mean, unit-variance fields with correlation `C`.
pub fn standard_pair<R: Rng + ?Sized>(spec: &EigenSpectrum, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let eps: Vec<Complex64> = (0..spec.len())
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let z = spec.color(&eps)?;
    Ok(z.into_iter().map(|v| (v.re, v.im)).unzip())
}

/// Two independent draws from `N(μ1, σ²C)`.
pub fn unconditional_pair<R: Rng + ?Sized>(
    spec: &EigenSpectrum,
    p: &ParamSet,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(p.sigma2 >= 0.0) {
        return Err(Error::OutOfSupport(format!("sigma2 = {} must be nonnegative", p.sigma2)));
    }
    let (a, b) = standard_pair(spec, rng)?;
    let sd = p.sigma2.sqrt();
    let shift = |v: Vec<f64>| v.into_iter().map(|y| p.mu + sd * y).collect();
    Ok((shift(a), shift(b)))
}

/// Conditions an unconditional draw `tilde` (full embedding field) on `z_o`.
pub fn condition_on(
    z_o: &[f64],
    tilde: &[f64],
    mask: &ObservationMask,
    spec: &EigenSpectrum,
    precond: &dyn Preconditioner,
    cfg: &PcgConfig,
) -> Result<ConditionalDraw> {
    check_len(mask.n(), z_o.len())?;
    check_len(mask.total(), tilde.len())?;
    if mask.is_full() {
        return Ok(ConditionalDraw {
            z_u: Vec::new(),
            solver_iters: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let eta: Vec<f64> = mask
        .observed
        .iter()
        .zip(z_o)
        .map(|(&k, &z)| z - tilde[k])
        .collect();
    let sol = solve_observed(spec, mask, precond, &eta, cfg)?;
    let (_, c_uo_x) = spec.partitioned_matvec(mask, &sol.x)?;
    let z_u = mask
        .unobserved
        .iter()
        .zip(&c_uo_x)
        .map(|(&k, &c)| tilde[k] + c)
        .collect();
    Ok(ConditionalDraw {
        z_u,
        solver_iters: sol.iterations,
        residual: sol.residual,
        converged: sol.converged,
    })
}

/// One draw of `Z_u | Z_o = z_o` under `p`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_draw<R: Rng + ?Sized>(
    z_o: &[f64],
    mask: &ObservationMask,
    spec: &EigenSpectrum,
    p: &ParamSet,
    precond: &dyn Preconditioner,
    cfg: &PcgConfig,
    rng: &mut R,
) -> Result<ConditionalDraw> {
    let (tilde, _) = unconditional_pair(spec, p, rng)?;
    condition_on(z_o, &tilde, mask, spec, precond, cfg)
}

/// Hands out conditional draws two at a time: each unconditional pair feeds
/// the current request and is banked for the next one at the same `θ`.
#[derive(Debug, Default, Clone)]
pub struct PairedSampler {
    banked: Option<(Theta, Vec<f64>)>,
}

impl PairedSampler {
    pub fn new() -> Self {
        Self::default()
    }

    /// A standardized (`μ = 0`, `σ² = 1`) unconditional field at `θ`.
    pub fn standard_field<R: Rng + ?Sized>(&mut self, theta: &Theta, spec: &EigenSpectrum, rng: &mut R) -> Result<Vec<f64>> {
        if let Some((t, f)) = self.banked.take() {
            if t == *theta && f.len() == spec.len() {
                return Ok(f);
            }
        }
        let (a, b) = standard_pair(spec, rng)?;
        self.banked = Some((*theta, b));
        Ok(a)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        z_o: &[f64],
        mask: &ObservationMask,
        spec: &EigenSpectrum,
        p: &ParamSet,
        precond: &dyn Preconditioner,
        cfg: &PcgConfig,
        rng: &mut R,
    ) -> Result<ConditionalDraw> {
        if mask.is_full() {
            return condition_on(z_o, &mask.scatter(z_o), mask, spec, precond, cfg);
        }
        let sd = p.sigma2.sqrt();
        let tilde: Vec<f64> = self
            .standard_field(&p.theta, spec, rng)?
            .into_iter()
            .map(|y| p.mu + sd * y)
            .collect();
        condition_on(z_o, &tilde, mask, spec, precond, cfg)
    }
}

/// `E(Z | Z_o = z_o)` over the whole embedding: `z_o` at observed sites and
/// `μ + C_uo C_oo⁻¹(z_o − μ1)` elsewhere. Also returns the PCG iteration count.
pub fn conditional_mean(
    z_o: &[f64],
    mask: &ObservationMask,
    spec: &EigenSpectrum,
    mu: f64,
    precond: &dyn Preconditioner,
    cfg: &PcgConfig,
) -> Result<(Vec<f64>, usize)> {
    check_len(mask.n(), z_o.len())?;
    if mask.is_full() {
        return Ok((mask.scatter(z_o), 0));
    }
    let resid: Vec<f64> = z_o.iter().map(|z| z - mu).collect();
    let sol = solve_observed(spec, mask, precond, &resid, cfg)?;
    let (_, c_uo_x) = spec.partitioned_matvec(mask, &sol.x)?;
    let z_u: Vec<f64> = c_uo_x.iter().map(|c| mu + c).collect();
    Ok((mask.assemble(z_o, &z_u), sol.iterations))
}
