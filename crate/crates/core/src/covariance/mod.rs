//! Correlation families, the cutoff modification and the BCCB base vector.

mod family;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use family::{CorrelationFamily, Matern, PoweredExponential, MATERN_NU_MAX};

use crate::error::{Error, Result};
use crate::lattice::EmbeddingSpec;
use crate::registry::Registry;

/// Correlation parameters: range `λ`, shape (`α` or `ν`) and the
/// noise-to-signal ratio `c` (nugget variance `c·σ²`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    pub lambda: f64,
    pub shape: f64,
    pub nugget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSet {
    pub mu: f64,
    pub sigma2: f64,
    pub theta: Theta,
}

impl ParamSet {
    pub fn new(mu: f64, sigma2: f64, lambda: f64, shape: f64, nugget: f64) -> Self {
        Self {
            mu,
            sigma2,
            theta: Theta {
                lambda,
                shape,
                nugget,
            },
        }
    }
}

/// Which components of `θ` are estimated; the rest stay at their
/// configured values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParams {
    pub lambda: bool,
    pub shape: bool,
    pub nugget: bool,
}

impl FreeParams {
    pub fn all() -> Self {
        Self {
            lambda: true,
            shape: true,
            nugget: true,
        }
    }

    pub fn count(&self) -> usize {
        self.lambda as usize + self.shape as usize + self.nugget as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    None,
    /// Cutoff at normalized radius `r > 1`.
    Radius(f64),
}

#[derive(Clone)]
pub struct CorrelationModel {
    pub family: Arc<dyn CorrelationFamily>,
    pub cutoff: Cutoff,
}

impl std::fmt::Debug for CorrelationModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorrelationModel")
            .field("family", &self.family.name())
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

impl CorrelationModel {
    pub fn new(family: Arc<dyn CorrelationFamily>, cutoff: Cutoff) -> Result<Self> {
        if let Cutoff::Radius(r) = cutoff {
            if !(r.is_finite() && r > 1.0) {
                return Err(Error::invalid(format!(
                    "cutoff radius must exceed 1 in normalized units, got {r}"
                )));
            }
        }
        Ok(Self { family, cutoff })
    }

    /// Model whose cutoff radius is the one implied by the embedding, or
    /// plain periodization when `cutoff` is false.
    pub fn for_embedding(
        family: Arc<dyn CorrelationFamily>,
        emb: &EmbeddingSpec,
        cutoff: bool,
    ) -> Result<Self> {
        let cutoff = if cutoff {
            Cutoff::Radius(emb.normalized_radius())
        } else {
            Cutoff::None
        };
        Self::new(family, cutoff)
    }

    pub fn check(&self, theta: &Theta) -> Result<()> {
        if !(theta.lambda.is_finite() && theta.lambda > 0.0) {
            return Err(Error::OutOfSupport(format!(
                "lambda = {} must be positive",
                theta.lambda
            )));
        }
        if !(theta.nugget.is_finite() && theta.nugget >= 0.0) {
            return Err(Error::OutOfSupport(format!(
                "c = {} must be nonnegative",
                theta.nugget
            )));
        }
        self.family.check_shape(theta.shape)
    }

    /// Correlation without periodization or cutoff, nugget included at `h = 0`.
    pub fn raw(&self, theta: &Theta, h: f64) -> f64 {
        if h == 0.0 {
            1.0 + theta.nugget
        } else {
            self.family.phi(h, theta.lambda, theta.shape)
        }
    }

    /// Kernel at `theta` with distances normalized by `scale`.
    pub fn kernel(&self, theta: &Theta, scale: f64) -> Result<Kernel> {
        self.check(theta)?;
        let coeffs = match self.cutoff {
            Cutoff::None => None,
            Cutoff::Radius(r) => Some(CutoffCoeffs::new(
                self.family.phi(scale, theta.lambda, theta.shape),
                scale * self.family.dphi(scale, theta.lambda, theta.shape),
                r,
            )?),
        };
        Ok(Kernel {
            family: self.family.clone(),
            theta: *theta,
            scale,
            coeffs,
        })
    }
}

/// Coefficients of the quadratic bridge `a + b(u - r)²` on `1 ≤ u < r`.
///
/// Matching value and slope of `φ` at `u = 1` gives
/// `b = -φ'(1) / (2(r - 1))` and `a = φ(1) - b(r - 1)²`; the slope at `r` is
/// then zero, so the function continues flat at `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffCoeffs {
    pub r: f64,
    pub a: f64,
    pub b: f64,
}

impl CutoffCoeffs {
    pub fn new(phi1: f64, dphi1: f64, r: f64) -> Result<Self> {
        if !(r > 1.0) {
            return Err(Error::invalid(format!(
                "cutoff radius must exceed 1, got {r}"
            )));
        }
        let b = -dphi1 / (2.0 * (r - 1.0));
        let a = phi1 - b * (r - 1.0) * (r - 1.0);
        Ok(Self { r, a, b })
    }

    /// Modified correlation at normalized distance `u`; `phi` is only
    /// evaluated below the matching point.
    pub fn apply(&self, u: f64, phi: impl FnOnce() -> f64) -> f64 {
        if u < 1.0 {
            phi()
        } else if u < self.r {
            self.a + self.b * (u - self.r) * (u - self.r)
        } else {
            self.a
        }
    }
}

/// A correlation function fixed at one `θ`, ready for repeated evaluation.
#[derive(Clone)]
pub struct Kernel {
    family: Arc<dyn CorrelationFamily>,
    theta: Theta,
    /// Distance that maps to normalized distance 1.
    scale: f64,
    coeffs: Option<CutoffCoeffs>,
}

impl Kernel {
    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn coeffs(&self) -> Option<CutoffCoeffs> {
        self.coeffs
    }

    /// Correlation at distance `h`, nugget excluded.
    pub fn rho(&self, h: f64) -> f64 {
        let (lambda, shape) = (self.theta.lambda, self.theta.shape);
        match &self.coeffs {
            None => self.family.phi(h, lambda, shape),
            Some(c) => c.apply(h / self.scale, || self.family.phi(h, lambda, shape)),
        }
    }

    /// Correlation at distance `h` including the nugget at `h = 0`.
    pub fn corr(&self, h: f64) -> f64 {
        if h == 0.0 {
            1.0 + self.theta.nugget
        } else {
            self.rho(h)
        }
    }
}

/// First column of the BCCB correlation matrix: the (cutoff-modified)
/// correlation at the wrapped distance from site 0 to every embedding site,
/// in lexicographic order. Distances are normalized by the base diameter.
pub fn base_vector(
    emb: &EmbeddingSpec,
    model: &CorrelationModel,
    theta: &Theta,
) -> Result<Vec<f64>> {
    let kernel = model.kernel(theta, emb.base.diameter())?;
    let (n1, n2) = emb.shape();
    let (h1, h2) = (n1 / 2, n2 / 2);
    let delta = emb.base.delta;
    // Each distinct lag once; square embeddings are also symmetric in (di, dj).
    let mut table = vec![0.0; (h1 + 1) * (h2 + 1)];
    for di in 0..=h1 {
        for dj in 0..=h2 {
            let idx = di * (h2 + 1) + dj;
            if n1 == n2 && dj < di {
                table[idx] = table[dj * (h2 + 1) + di];
                continue;
            }
            let h = delta * ((di * di + dj * dj) as f64).sqrt();
            table[idx] = kernel.corr(h);
        }
    }
    let mut c = vec![0.0; n1 * n2];
    for i in 0..n1 {
        let di = i.min(n1 - i);
        for j in 0..n2 {
            let dj = j.min(n2 - j);
            c[i * n2 + j] = table[di * (h2 + 1) + dj];
        }
    }
    Ok(c)
}

pub fn family_registry() -> Registry<dyn CorrelationFamily> {
    let mut reg: Registry<dyn CorrelationFamily> = Registry::new("correlation family");
    reg.register("powexp", Arc::new(PoweredExponential));
    reg.register("matern", Arc::new(Matern));
    reg
}

pub fn family(name: &str) -> Result<Arc<dyn CorrelationFamily>> {
    family_registry().get(name)
}

/// Unconstrained coordinates of the free components of `θ`:
/// `ln λ`, the family's shape transform, and `ln c`.
pub fn theta_to_free(family: &dyn CorrelationFamily, theta: &Theta, free: FreeParams) -> Vec<f64> {
    let mut z = Vec::with_capacity(free.count());
    if free.lambda {
        z.push(theta.lambda.ln());
    }
    if free.shape {
        z.push(family.shape_to_free(theta.shape));
    }
    if free.nugget {
        z.push(theta.nugget.ln());
    }
    z
}

pub fn theta_from_free(
    family: &dyn CorrelationFamily,
    z: &[f64],
    base: &Theta,
    free: FreeParams,
) -> Theta {
    let mut it = z.iter().copied();
    let mut t = *base;
    if free.lambda {
        t.lambda = it.next().expect("free coordinate").exp();
    }
    if free.shape {
        t.shape = family.shape_from_free(it.next().expect("free coordinate"));
    }
    if free.nugget {
        t.nugget = it.next().expect("free coordinate").exp();
    }
    t
}
