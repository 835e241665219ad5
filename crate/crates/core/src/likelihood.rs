//! Complete-data loglikelihood on the embedding, the conjugate pieces of the
//! parameter posterior, the Monte Carlo profile used by EM, and the dense
//! exact likelihood of the observations.
//!
//! The embedding-based functions drop the additive `(N/2) ln 2π`. The dense
//! and composite likelihoods keep it, since they are compared with each
//! other as proper log densities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bccb::{power_spectrum, EigenSpectrum, Fft2};
use crate::covariance::{base_vector, CorrelationFamily, CorrelationModel, FreeParams, ParamSet, Theta};
use crate::error::{check_len, Error, Result};
use crate::lattice::EmbeddingSpec;

/// Largest observation count the dense likelihood will factorize by default.
pub const DEFAULT_DENSE_LIMIT: usize = 12_000;

/// `−(N/2) ln σ² − ½ ln|C| − (z − μ1)'C⁻¹(z − μ1) / (2σ²)`.
pub fn complete_loglik(z: &[f64], p: &ParamSet, spec: &EigenSpectrum) -> Result<f64> {
    check_len(spec.len(), z.len())?;
    let logdet = spec.logdet()?;
    let resid: Vec<f64> = z.iter().map(|v| v - p.mu).collect();
    let q = spec.inv_quad_form(&resid)?;
    let n = z.len() as f64;
    Ok(-0.5 * n * p.sigma2.ln() - 0.5 * logdet - q / (2.0 * p.sigma2))
}

/// Priors on `θ`: `π(λ) = a / (1 + aλ)²` (median `1/a`), uniform on the
/// family's shape range, and `c ~ U(0, nugget_max)` when `c` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prior {
    pub lambda_rate: f64,
    pub nugget_max: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Self {
            lambda_rate: 0.5,
            nugget_max: 10.0,
        }
    }
}

impl Prior {
    pub fn log_lambda(&self, lambda: f64) -> f64 {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return f64::NEG_INFINITY;
        }
        self.lambda_rate.ln() - 2.0 * (1.0 + self.lambda_rate * lambda).ln()
    }

    /// Log density of the free components of `θ`; `−∞` outside the support.
    pub fn log_density(&self, family: &dyn CorrelationFamily, theta: &Theta, free: FreeParams) -> f64 {
        let mut lp = 0.0;
        if free.lambda {
            lp += self.log_lambda(theta.lambda);
        } else if !(theta.lambda > 0.0) {
            return f64::NEG_INFINITY;
        }
        if family.check_shape(theta.shape).is_err() {
            return f64::NEG_INFINITY;
        }
        if free.shape {
            let (lo, hi, _) = family.shape_bounds();
            lp -= (hi - lo).ln();
        }
        if free.nugget {
            if !(theta.nugget >= 0.0 && theta.nugget <= self.nugget_max) {
                return f64::NEG_INFINITY;
            }
            lp -= self.nugget_max.ln();
        } else if !(theta.nugget >= 0.0) {
            return f64::NEG_INFINITY;
        }
        lp
    }
}

/// Power spectrum and mean of one complete field, reusable across `θ`.
#[derive(Debug, Clone)]
pub struct FieldPower {
    pub power: Vec<f64>,
    pub mean: f64,
}

impl FieldPower {
    pub fn new(z: &[f64], fft: &Fft2) -> Result<Self> {
        check_len(fft.len(), z.len())?;
        Ok(Self {
            power: power_spectrum(fft, z),
            mean: z.iter().sum::<f64>() / z.len() as f64,
        })
    }
}

/// The quantities that make up the `θ` marginal and the conjugate
/// `(σ², μ)` conditionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorKernelParts {
    pub logdet_c: f64,
    /// `ln(1'C⁻¹1) = ln(N / λ₀)`.
    pub logdet_ones: f64,
    /// `(z − z̄1)'C⁻¹(z − z̄1)`.
    pub s2: f64,
    pub mu_hat: f64,
    pub n: usize,
}

impl PosteriorKernelParts {
    pub fn new(fp: &FieldPower, spec: &EigenSpectrum) -> Result<Self> {
        check_len(spec.len(), fp.power.len())?;
        let logdet_c = spec.logdet()?;
        let lam = spec.values();
        // The constant vector spans the zero frequency, so centering at z̄
        // removes exactly that term.
        let s2: f64 = fp.power[1..].iter().zip(&lam[1..]).map(|(p, l)| p / l).sum();
        let n = spec.len();
        Ok(Self {
            logdet_c,
            logdet_ones: (n as f64 / spec.zero_frequency()).ln(),
            s2,
            mu_hat: fp.mean,
            n,
        })
    }

    /// `ln π(θ | Z)` up to a constant, without the prior.
    pub fn log_marginal(&self) -> f64 {
        -0.5 * self.logdet_c - 0.5 * self.logdet_ones - 0.5 * (self.n as f64 - 1.0) * self.s2.ln()
    }

    /// `σ² ~ IG((N−1)/2, S²/2)`, then `μ | σ² ~ N(z̄, σ²/(1'C⁻¹1))`.
    pub fn draw_sigma2_mu<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(f64, f64)> {
        if !(self.s2 > 0.0) {
            return Err(Error::invalid(format!("S² = {} must be positive", self.s2)));
        }
        let shape = 0.5 * (self.n as f64 - 1.0);
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
        let sigma2 = 0.5 * self.s2 / g.sample(rng);
        let sd = (sigma2 * (-self.logdet_ones).exp()).sqrt();
        let eps: f64 = rng.sample(StandardNormal);
        Ok((sigma2, self.mu_hat + sd * eps))
    }
}

/// Spectrum of the embedded correlation matrix at `θ`.
pub fn spectrum_at(emb: &EmbeddingSpec, model: &CorrelationModel, theta: &Theta) -> Result<EigenSpectrum> {
    let c = base_vector(emb, model, theta)?;
    EigenSpectrum::new(&c, emb.shape())
}

/// `ln π(θ | Z)` up to a constant, prior included. Out-of-support `θ` and
/// non-positive-definite embeddings give `−∞`.
pub fn theta_log_kernel(
    theta: &Theta,
    fp: &FieldPower,
    emb: &EmbeddingSpec,
    model: &CorrelationModel,
    prior: &Prior,
    free: FreeParams,
) -> f64 {
    let lp = prior.log_density(model.family.as_ref(), theta, free);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    let parts = spectrum_at(emb, model, theta).and_then(|spec| PosteriorKernelParts::new(fp, &spec));
    match parts {
        Ok(p) if p.s2 > 0.0 => p.log_marginal() + lp,
        _ => f64::NEG_INFINITY,
    }
}

/// One draw of `(σ², μ)` from their conditional given `θ` and `z`.
pub fn draw_sigma2_mu<R: Rng + ?Sized>(z: &[f64], spec: &EigenSpectrum, rng: &mut R) -> Result<(f64, f64)> {
    let fp = FieldPower::new(z, spec.fft())?;
    PosteriorKernelParts::new(&fp, spec)?.draw_sigma2_mu(rng)
}

/// Dense correlation matrix of `coords` under the unmodified `φ`.
pub fn dense_correlation(coords: &[(f64, f64)], theta: &Theta, model: &CorrelationModel) -> DMatrix<f64> {
    let n = coords.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = model.raw(theta, 0.0);
        for j in 0..i {
            let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
            let v = model.raw(theta, (dx * dx + dy * dy).sqrt());
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Solves against and takes the log determinant of one dense SPD matrix.
struct DenseFactor {
    l: DMatrix<f64>,
    logdet: f64,
}

impl DenseFactor {
    fn new(m: DMatrix<f64>) -> Result<Self> {
        let ch = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = ch.unpack();
        let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { l, logdet })
    }

    /// `L⁻¹ x`.
    fn whiten(&self, x: &[f64]) -> DVector<f64> {
        let v = DVector::from_column_slice(x);
        self.l
            .solve_lower_triangular(&v)
            .expect("Cholesky factor has a positive diagonal")
    }
}

fn guard(n: usize, limit: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("no observations"));
    }
    if n > limit {
        return Err(Error::invalid(format!(
            "{n} observations exceed the dense limit of {limit}"
        )));
    }
    Ok(())
}

const LN_2PI: f64 = 1.8378770664093453;

/// Exact Gaussian loglikelihood of `z_o` at `coords`, `2π` included.
pub fn dense_loglik(
    z_o: &[f64],
    coords: &[(f64, f64)],
    p: &ParamSet,
    model: &CorrelationModel,
    limit: usize,
) -> Result<f64> {
    check_len(coords.len(), z_o.len())?;
    guard(z_o.len(), limit)?;
    model.check(&p.theta)?;
    let f = DenseFactor::new(dense_correlation(coords, &p.theta, model))?;
    let resid: Vec<f64> = z_o.iter().map(|z| z - p.mu).collect();
    let w = f.whiten(&resid);
    let n = z_o.len() as f64;
    Ok(-0.5 * n * (LN_2PI + p.sigma2.ln()) - 0.5 * f.logdet - w.norm_squared() / (2.0 * p.sigma2))
}

/// Dense likelihood with `μ` and `σ²` at their maximizers for fixed `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseProfile {
    pub loglik: f64,
    pub mu: f64,
    pub sigma2: f64,
}

/// Profiles `μ` (generalized least squares) and `σ² = S²/n` out of the
/// dense likelihood.
pub fn dense_profile(
    z_o: &[f64],
    coords: &[(f64, f64)],
    theta: &Theta,
    model: &CorrelationModel,
    limit: usize,
) -> Result<DenseProfile> {
    check_len(coords.len(), z_o.len())?;
    guard(z_o.len(), limit)?;
    model.check(theta)?;
    let f = DenseFactor::new(dense_correlation(coords, theta, model))?;
    let wz = f.whiten(z_o);
    let w1 = f.whiten(&vec![1.0; z_o.len()]);
    let a = w1.norm_squared();
    let b = w1.dot(&wz);
    let mu = b / a;
    let s2 = (wz.norm_squared() - b * b / a).max(0.0);
    let n = z_o.len() as f64;
    let sigma2 = s2 / n;
    let loglik = -0.5 * n * (LN_2PI + sigma2.ln()) - 0.5 * f.logdet - 0.5 * n;
    Ok(DenseProfile { loglik, mu, sigma2 })
}

/// Monte Carlo sufficient statistics of an E-step: the mean power spectrum
/// of `Z⁽ⁱ⁾ − μ̂1` over the simulations, with `μ̂ = 1'μ̃ / N`.
#[derive(Debug, Clone)]
pub struct EmSufficient {
    pub mean_power: Vec<f64>,
    pub mu_hat: f64,
    pub sims: usize,
}

impl EmSufficient {
    pub fn from_fields(fields: &[Vec<f64>], mu_tilde: &[f64], fft: &Fft2) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::invalid("at least one simulation is required"));
        }
        check_len(fft.len(), mu_tilde.len())?;
        let mu_hat = mu_tilde.iter().sum::<f64>() / mu_tilde.len() as f64;
        let mut acc = vec![0.0; fft.len()];
        for f in fields {
            check_len(fft.len(), f.len())?;
            let centered: Vec<f64> = f.iter().map(|v| v - mu_hat).collect();
            for (a, p) in acc.iter_mut().zip(power_spectrum(fft, &centered)) {
                *a += p;
            }
        }
        let m = fields.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        Ok(Self {
            mean_power: acc,
            mu_hat,
            sims: fields.len(),
        })
    }
}

/// Value of the Monte Carlo profile and the `(σ², μ)` it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileValue {
    pub qp: f64,
    pub sigma2: f64,
    pub mu: f64,
}

/// `Q̂p(θ) = −(N/2) ln σ̂²(θ) − ½ ln|C(θ)|` with `σ̂²(θ) = Ŝ²(θ)/N`.
/// Non-positive-definite embeddings give `Q̂p = −∞`.
pub fn profile_qp(theta: &Theta, suff: &EmSufficient, emb: &EmbeddingSpec, model: &CorrelationModel) -> ProfileValue {
    let bad = ProfileValue {
        qp: f64::NEG_INFINITY,
        sigma2: f64::NAN,
        mu: suff.mu_hat,
    };
    let Ok(spec) = spectrum_at(emb, model, theta) else {
        return bad;
    };
    let Ok(logdet) = spec.logdet() else {
        return bad;
    };
    let n = spec.len() as f64;
    let s2: f64 = suff.mean_power.iter().zip(spec.values()).map(|(p, l)| p / l).sum();
    let sigma2 = s2 / n;
    if !(sigma2 > 0.0) {
        return bad;
    }
    ProfileValue {
        qp: -0.5 * n * sigma2.ln() - 0.5 * logdet,
        sigma2,
        mu: suff.mu_hat,
    }
}
