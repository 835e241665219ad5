use crate::covariance::{theta_from_free, theta_to_free, ParamSet};
use crate::em::{nelder_mead, SimplexConfig};
use crate::error::Result;
use crate::likelihood::dense_profile;
use crate::problem::{method_of_moments, Dataset, ModelSpec};

/// Maximizes the dense likelihood of the observations under the unmodified
/// correlation, with `μ` and `σ²` profiled out. Returns the estimate and
/// the maximized loglikelihood.
pub fn exact_mle(data: &Dataset, spec: &ModelSpec, simplex: &SimplexConfig, limit: usize) -> Result<(ParamSet, f64)> {
    let coords = data.coords();
    let start = method_of_moments(data, spec)?.theta;
    let family = spec.model.family.as_ref();
    let objective = |z: &[f64]| {
        let t = theta_from_free(family, z, &start, spec.free);
        dense_profile(&data.z_o, &coords, &t, &spec.model, limit).map_or(f64::NEG_INFINITY, |p| p.loglik)
    };
    let r = nelder_mead(objective, &theta_to_free(family, &start, spec.free), simplex)?;
    let theta = theta_from_free(family, &r.x, &start, spec.free);
    let p = dense_profile(&data.z_o, &coords, &theta, &spec.model, limit)?;
    Ok((
        ParamSet {
            mu: p.mu,
            sigma2: p.sigma2,
            theta,
        },
        p.loglik,
    ))
}
