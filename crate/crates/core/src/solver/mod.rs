//! Solving `C_oo x = b` on the observed sites by preconditioned conjugate
//! gradients, with interchangeable preconditioners.

mod pcg;
pub mod vecchia;

use std::sync::Arc;

pub use pcg::{pcg_solve, PcgConfig, PcgOutcome};
pub use vecchia::{ConditioningRule, VecchiaLayout, VecchiaPrecond};

use crate::bccb::EigenSpectrum;
use crate::error::{check_len, Result};
use crate::lattice::{EmbeddingSpec, ObservationMask};
use crate::registry::Registry;

/// Default conditioning-set size of the Vecchia preconditioner.
pub const DEFAULT_COND_SIZE: usize = 33;

/// An approximation `M⁻¹` of `C_oo⁻¹`, applied as an operator.
pub trait Preconditioner: Send + Sync {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

/// Everything a preconditioner may be built from.
pub struct PrecondContext<'a> {
    pub emb: &'a EmbeddingSpec,
    pub mask: &'a ObservationMask,
    /// BCCB base vector of the correlation matrix.
    pub base: &'a [f64],
    pub spectrum: &'a EigenSpectrum,
    pub cond_size: usize,
    /// Precomputed block layout, reused across parameter values.
    pub layout: Option<Arc<VecchiaLayout>>,
}

pub trait PreconditionerFactory: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, ctx: &PrecondContext) -> Result<Box<dyn Preconditioner>>;
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// `(C⁻¹)_oo`: scatter into the embedding, apply `C⁻¹`, gather.
pub struct InverseBlock {
    spectrum: EigenSpectrum,
    mask: ObservationMask,
}

impl InverseBlock {
    pub fn new(spectrum: &EigenSpectrum, mask: &ObservationMask) -> Result<Self> {
        spectrum.require_positive()?;
        check_len(spectrum.len(), mask.total())?;
        Ok(Self {
            spectrum: spectrum.clone(),
            mask: mask.clone(),
        })
    }
}

impl Preconditioner for InverseBlock {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let full = self
            .spectrum
            .solve(&self.mask.scatter(x))
            .expect("dimensions checked at construction");
        self.mask.gather_observed(&full)
    }
}

impl Preconditioner for VecchiaPrecond {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        VecchiaPrecond::apply(self, x).expect("observed-length vector")
    }
}

/// Covariance between lattice sites `(di, dj)` steps apart, read off the
/// periodized base vector.
pub fn periodic_cov<'a>(emb: &EmbeddingSpec, base: &'a [f64]) -> impl Fn(i32, i32) -> f64 + 'a {
    let (n1, n2) = (emb.n1 as i32, emb.n2 as i32);
    move |di, dj| base[(di.rem_euclid(n1) * n2 + dj.rem_euclid(n2)) as usize]
}

struct IdentityFactory;
struct VecchiaFactory;
struct InverseBlockFactory;

impl PreconditionerFactory for IdentityFactory {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn build(&self, _: &PrecondContext) -> Result<Box<dyn Preconditioner>> {
        Ok(Box::new(Identity))
    }
}

impl PreconditionerFactory for VecchiaFactory {
    fn name(&self) -> &'static str {
        "vecchia"
    }
    fn build(&self, ctx: &PrecondContext) -> Result<Box<dyn Preconditioner>> {
        let layout = match &ctx.layout {
            Some(l) => l.clone(),
            None => Arc::new(VecchiaLayout::build(ctx.emb, ctx.mask, ctx.cond_size)),
        };
        let cov = periodic_cov(ctx.emb, ctx.base);
        Ok(Box::new(VecchiaPrecond::build(layout, &cov)?))
    }
}

impl PreconditionerFactory for InverseBlockFactory {
    fn name(&self) -> &'static str {
        "inverse-block"
    }
    fn build(&self, ctx: &PrecondContext) -> Result<Box<dyn Preconditioner>> {
        Ok(Box::new(InverseBlock::new(ctx.spectrum, ctx.mask)?))
    }
}

pub fn preconditioner_registry() -> Registry<dyn PreconditionerFactory> {
    let mut reg: Registry<dyn PreconditionerFactory> = Registry::new("preconditioner");
    reg.register("identity", Arc::new(IdentityFactory));
    reg.register("vecchia", Arc::new(VecchiaFactory));
    reg.register("inverse-block", Arc::new(InverseBlockFactory));
    reg
}

pub fn preconditioner(name: &str) -> Result<Arc<dyn PreconditionerFactory>> {
    preconditioner_registry().get(name)
}

/// Solves `C_oo x = b` with `C_oo` applied through zero-padded FFT products.
pub fn solve_observed(
    spectrum: &EigenSpectrum,
    mask: &ObservationMask,
    precond: &dyn Preconditioner,
    b: &[f64],
    cfg: &PcgConfig,
) -> Result<PcgOutcome> {
    check_len(mask.n(), b.len())?;
    check_len(spectrum.len(), mask.total())?;
    pcg_solve(
        |x| {
            let full = spectrum
                .matvec(&mask.scatter(x))
                .expect("embedding-length vector");
            mask.gather_observed(&full)
        },
        |x| precond.apply(x),
        b,
        cfg,
    )
}
