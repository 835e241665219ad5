use std::sync::Arc;

use crate::covariance::{theta_from_free, theta_to_free, CorrelationModel, ParamSet, Theta};
use crate::em::{nelder_mead, SimplexConfig};
use crate::error::{check_len, Result};
use crate::problem::{method_of_moments, Dataset, ModelSpec};
use crate::solver::{VecchiaLayout, VecchiaPrecond};

const LN_2PI: f64 = 1.8378770664093453;

/// Conditional factors under the unmodified correlation at `θ`, times `scale`.
fn factors(data: &Dataset, layout: &Arc<VecchiaLayout>, model: &CorrelationModel, theta: &Theta, scale: f64) -> Result<VecchiaPrecond> {
    model.check(theta)?;
    check_len(data.z_o.len(), layout.n)?;
    let delta = data.emb.base.delta;
    let cov = |di: i32, dj: i32| {
        let h = delta * ((di * di + dj * dj) as f64).sqrt();
        scale * model.raw(theta, h)
    };
    VecchiaPrecond::build(layout.clone(), &cov)
}

/// `Σ_j [−(n_j/2) ln 2π − ½ ln|V_j| − ½ (L_j(z − μ))' V_j⁻¹ L_j(z − μ)]`.
pub fn composite_loglik(data: &Dataset, layout: &Arc<VecchiaLayout>, p: &ParamSet, model: &CorrelationModel) -> Result<f64> {
    let f = factors(data, layout, model, &p.theta, p.sigma2)?;
    let resid: Vec<f64> = data.z_o.iter().map(|z| z - p.mu).collect();
    let (logdet, quad) = f.logdet_and_quad(&resid)?;
    let n = resid.len() as f64;
    Ok(-0.5 * n * LN_2PI - 0.5 * logdet - 0.5 * quad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeProfile {
    pub loglik: f64,
    pub mu: f64,
    pub sigma2: f64,
}

/// Composite likelihood at `θ` with `μ` set to its generalized least
/// squares value under the implied precision `Q = Σ_j L_j'V_j⁻¹L_j` and
/// `σ² = (z − μ̂)'Q(z − μ̂)/n`.
pub fn composite_profile(data: &Dataset, layout: &Arc<VecchiaLayout>, theta: &Theta, model: &CorrelationModel) -> Result<CompositeProfile> {
    let f = factors(data, layout, model, theta, 1.0)?;
    let n = data.z_o.len();
    let q1 = f.apply(&vec![1.0; n])?;
    let mu = q1.iter().zip(&data.z_o).map(|(a, z)| a * z).sum::<f64>() / q1.iter().sum::<f64>();
    let resid: Vec<f64> = data.z_o.iter().map(|z| z - mu).collect();
    let (logdet, quad) = f.logdet_and_quad(&resid)?;
    let nf = n as f64;
    let sigma2 = quad / nf;
    Ok(CompositeProfile {
        loglik: -0.5 * nf * (LN_2PI + sigma2.ln() + 1.0) - 0.5 * logdet,
        mu,
        sigma2,
    })
}

pub fn composite_mle(data: &Dataset, spec: &ModelSpec, cond_size: usize, simplex: &SimplexConfig) -> Result<(ParamSet, f64)> {
    let layout = Arc::new(VecchiaLayout::build(&data.emb, &data.mask, cond_size));
    let start = method_of_moments(data, spec)?.theta;
    let family = spec.model.family.as_ref();
    let objective = |z: &[f64]| {
        let t = theta_from_free(family, z, &start, spec.free);
        composite_profile(data, &layout, &t, &spec.model).map_or(f64::NEG_INFINITY, |p| p.loglik)
    };
    let r = nelder_mead(objective, &theta_to_free(family, &start, spec.free), simplex)?;
    let theta = theta_from_free(family, &r.x, &start, spec.free);
    let p = composite_profile(data, &layout, &theta, &spec.model)?;
    Ok((
        ParamSet {
            mu: p.mu,
            sigma2: p.sigma2,
            theta,
        },
        p.loglik,
    ))
}
