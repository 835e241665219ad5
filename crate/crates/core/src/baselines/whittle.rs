use std::f64::consts::PI;

use crate::bccb::Fft2;
use crate::covariance::{theta_from_free, theta_to_free, CorrelationFamily, ParamSet, Theta};
use crate::em::{nelder_mead, SimplexConfig};
use crate::error::{check_len, Error, Result};
use crate::lattice::LatticeSpec;
use crate::problem::{method_of_moments, Dataset, ModelSpec};

/// Aliases summed per coordinate on each side of a frequency.
pub const ALIASES: i32 = 2;

/// Periodogram of a demeaned complete field on the base lattice,
/// `I(ω) = δ² / ((2π)² n) |Σ_j y_j e^{−iω·δj}|²`, at the Fourier frequencies.
#[derive(Debug, Clone)]
pub struct Periodogram {
    pub values: Vec<f64>,
    /// `(ω₁, ω₂)` for each entry, components in `[−π/δ, π/δ)`.
    pub freqs: Vec<(f64, f64)>,
    pub delta: f64,
    pub base: LatticeSpec,
}

fn signed(k: usize, n: usize) -> f64 {
    if 2 * k >= n {
        k as f64 - n as f64
    } else {
        k as f64
    }
}

pub fn periodogram(field: &[f64], base: &LatticeSpec) -> Result<Periodogram> {
    let (n1, n2) = (base.n1, base.n2);
    check_len(n1 * n2, field.len())?;
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let centered: Vec<f64> = field.iter().map(|v| v - mean).collect();
    let t = Fft2::get(n1, n2).forward_real(&centered);
    let d = base.delta;
    let c = d * d / (4.0 * PI * PI * n);
    let values = t.iter().map(|z| c * z.norm_sqr()).collect();
    let freqs = (0..n1 * n2)
        .map(|k| {
            let (i, j) = (k / n2, k % n2);
            (
                2.0 * PI * signed(i, n1) / (n1 as f64 * d),
                2.0 * PI * signed(j, n2) / (n2 as f64 * d),
            )
        })
        .collect();
    Ok(Periodogram { values, freqs, delta: d, base: *base })
}

/// The continuous density summed over `±ALIASES` images per coordinate,
/// plus the nugget's `cδ²/(2π)²`. Close to [`sampled_density`] only when
/// the density falls off fast; the exponential loses about a tenth near
/// the Nyquist frequency.
pub fn aliased_density(family: &dyn CorrelationFamily, theta: &Theta, w: (f64, f64), delta: f64) -> Option<f64> {
    let period = 2.0 * PI / delta;
    let mut f = 0.0;
    for a in -ALIASES..=ALIASES {
        for b in -ALIASES..=ALIASES {
            let (u, v) = (w.0 + a as f64 * period, w.1 + b as f64 * period);
            f += family.spectral_density(u * u + v * v, theta.lambda, theta.shape)?;
        }
    }
    Some(f + theta.nugget * delta * delta / (4.0 * PI * PI))
}

/// Images of the lattice summed per coordinate at most, when wrapping the
/// covariance.
pub const MAX_WRAPS: usize = 64;

/// Spectral density of the lattice-sampled unit-variance field at every
/// Fourier frequency of `base`, in periodogram order. This is the DFT of
/// the correlation wrapped onto the `n1 × n2` torus, which by Poisson
/// summation equals the continuous density summed over all aliases; images
/// are added until the correlation at their near edge drops below 1e-14.
/// The nugget adds the flat `cδ²/(2π)²`.
pub fn sampled_density(family: &dyn CorrelationFamily, theta: &Theta, base: &LatticeSpec) -> Vec<f64> {
    let (n1, n2) = (base.n1, base.n2);
    let d = base.delta;
    let span = n1.min(n2) as f64 * d;
    let wraps = (1..=MAX_WRAPS)
        .find(|&k| family.phi((k as f64 - 0.5) * span, theta.lambda, theta.shape) < 1e-14)
        .unwrap_or(MAX_WRAPS) as i64;
    let mut wrapped = vec![0.0; n1 * n2];
    for (k, c) in wrapped.iter_mut().enumerate() {
        let (i, j) = ((k / n2) as i64, (k % n2) as i64);
        for a in -wraps..=wraps {
            let x = (i + a * n1 as i64) as f64 * d;
            for b in -wraps..=wraps {
                let y = (j + b * n2 as i64) as f64 * d;
                *c += family.phi((x * x + y * y).sqrt(), theta.lambda, theta.shape);
            }
        }
    }
    let scale = d * d / (4.0 * PI * PI);
    Fft2::get(n1, n2)
        .forward_real(&wrapped)
        .iter()
        .map(|z| scale * (z.re + theta.nugget))
        .collect()
}

fn spectrum(pg: &Periodogram, theta: &Theta, family: &dyn CorrelationFamily) -> Result<Vec<f64>> {
    let g = sampled_density(family, theta, &pg.base);
    if g.iter().skip(1).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid(format!("non-positive lattice spectrum at {theta:?}")));
    }
    Ok(g)
}

/// `−½ Σ_{ω≠0} [ln(σ² g(ω)) + I(ω)/(σ² g(ω))]`.
pub fn whittle_loglik(pg: &Periodogram, p: &ParamSet, family: &dyn CorrelationFamily) -> Result<f64> {
    let g = spectrum(pg, &p.theta, family)?;
    let s: f64 = pg.values.iter().zip(&g).skip(1).map(|(i, g)| (p.sigma2 * g).ln() + i / (p.sigma2 * g)).sum();
    Ok(-0.5 * s)
}

/// Whittle likelihood at `θ` with `σ²` at its maximizer `mean(I/g)`.
pub fn whittle_profile(pg: &Periodogram, theta: &Theta, family: &dyn CorrelationFamily) -> Result<(f64, f64)> {
    let g = spectrum(pg, theta, family)?;
    let (mut ratio, mut logg) = (0.0, 0.0);
    for (i, g) in pg.values.iter().zip(&g).skip(1) {
        ratio += i / g;
        logg += g.ln();
    }
    let m = (pg.values.len() - 1) as f64;
    let sigma2 = ratio / m;
    Ok((-0.5 * (m * sigma2.ln() + logg + m), sigma2))
}

/// Whittle estimate on a complete lattice; `μ̂` is the sample mean.
pub fn whittle_mle(data: &Dataset, spec: &ModelSpec, simplex: &SimplexConfig) -> Result<(ParamSet, f64)> {
    let field = data.complete_base().ok_or(Error::IncompleteLattice)?;
    let pg = periodogram(&field, &data.emb.base)?;
    let family = spec.model.family.as_ref();
    let start = method_of_moments(data, spec)?.theta;
    let objective = |z: &[f64]| {
        let t = theta_from_free(family, z, &start, spec.free);
        if spec.model.check(&t).is_err() {
            return f64::NEG_INFINITY;
        }
        whittle_profile(&pg, &t, family).map_or(f64::NEG_INFINITY, |v| v.0)
    };
    let r = nelder_mead(objective, &theta_to_free(family, &start, spec.free), simplex)?;
    let theta = theta_from_free(family, &r.x, &start, spec.free);
    let (ll, sigma2) = whittle_profile(&pg, &theta, family)?;
    Ok((
        ParamSet {
            mu: data.mean(),
            sigma2,
            theta,
        },
        ll,
    ))
}
