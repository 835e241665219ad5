//! Two-block Gibbs sampler: impute the unobserved embedding sites by
//! conditional simulation, then update `(θ, σ², μ)` as one block by
//! Metropolis-Hastings on `θ` followed by conjugate draws of `σ²` and `μ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{ParamSet, Theta};
use crate::error::{Error, Result};
use crate::likelihood::{spectrum_at, theta_log_kernel, FieldPower, PosteriorKernelParts, Prior};
use crate::problem::{check_start, method_of_moments, Dataset, ModelSpec, OperatorCache, Operators, SolverSettings};
use crate::rng::RandomStreams;
use crate::simulate::PairedSampler;

/// Random-walk coordinates for the shape parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeProposal {
    /// Gaussian step on the family's bounded transform (logit for `α`).
    Logit,
    /// Gaussian step on `ln shape`; proposals outside the support are
    /// rejected through the prior.
    Lognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Starting standard deviation of each random-walk coordinate.
    pub initial_sd: f64,
    /// Full starting proposal covariance; overrides `initial_sd`.
    pub proposal_cov: Option<Vec<Vec<f64>>>,
    pub target_accept: f64,
    /// Tune the proposal during burn-in.
    pub adapt: bool,
    pub shape_proposal: ShapeProposal,
    pub prior: Prior,
    pub solver: SolverSettings,
    /// Post-burn-in complete fields kept whole.
    pub snapshots: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 2500,
            burn_in: 500,
            initial_sd: 0.1,
            proposal_cov: None,
            target_accept: 0.35,
            adapt: true,
            shape_proposal: ShapeProposal::Logit,
            prior: Prior::default(),
            solver: SolverSettings {
                cond_size: 52,
                ..SolverSettings::default()
            },
            snapshots: 3,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target acceptance must lie in (0, 1)"));
        }
        if !(self.initial_sd >= 0.0) {
            return Err(Error::invalid("initial_sd must be nonnegative"));
        }
        if let Some(c) = &self.proposal_cov {
            let m = cov_matrix(c, dim)?;
            if m.cholesky().is_none() {
                return Err(Error::invalid("proposal covariance must be positive definite"));
            }
        }
        self.solver.pcg.validate()
    }
}

fn cov_matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid(format!("proposal covariance must be {dim}x{dim}")));
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
    if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::invalid("proposal covariance must be symmetric"));
    }
    Ok(m)
}

/// Maps between the free components of `θ` and random-walk coordinates.
#[derive(Clone)]
pub struct WalkCoords<'a> {
    spec: &'a ModelSpec,
    shape: ShapeProposal,
}

impl<'a> WalkCoords<'a> {
    pub fn new(spec: &'a ModelSpec, shape: ShapeProposal) -> Self {
        Self { spec, shape }
    }

    pub fn dim(&self) -> usize {
        self.spec.free.count()
    }

    pub fn to_walk(&self, t: &Theta) -> Vec<f64> {
        let f = self.spec.free;
        let mut y = Vec::with_capacity(self.dim());
        if f.lambda {
            y.push(t.lambda.ln());
        }
        if f.shape {
            y.push(match self.shape {
                ShapeProposal::Logit => self.spec.model.family.shape_to_free(t.shape),
                ShapeProposal::Lognormal => t.shape.ln(),
            });
        }
        if f.nugget {
            y.push(t.nugget.ln());
        }
        y
    }

    pub fn from_walk(&self, y: &[f64], base: &Theta) -> Theta {
        let f = self.spec.free;
        let mut it = y.iter().copied();
        let mut t = self.spec.with_free(base);
        if f.lambda {
            t.lambda = it.next().expect("walk coordinate").exp();
        }
        if f.shape {
            let v = it.next().expect("walk coordinate");
            t.shape = match self.shape {
                ShapeProposal::Logit => self.spec.model.family.shape_from_free(v),
                ShapeProposal::Lognormal => v.exp(),
            };
        }
        if f.nugget {
            t.nugget = it.next().expect("walk coordinate").exp();
        }
        t
    }

    /// `ln |dθ/dy|`, the term that turns a symmetric walk in `y` into the
    /// Hastings correction for a target density in `θ`.
    pub fn log_jacobian(&self, t: &Theta) -> f64 {
        let f = self.spec.free;
        let mut j = 0.0;
        if f.lambda {
            j += t.lambda.ln();
        }
        if f.shape {
            j += match self.shape {
                ShapeProposal::Logit => self.spec.model.family.shape_log_jacobian(t.shape),
                ShapeProposal::Lognormal => t.shape.ln(),
            };
        }
        if f.nugget {
            j += t.nugget.ln();
        }
        j
    }
}

/// Gaussian random-walk proposal `y* = y + s·Lε` with `LL'` the base
/// covariance and `s` a tunable scale.
#[derive(Debug, Clone)]
pub struct Proposal {
    chol: DMatrix<f64>,
    log_scale: f64,
}

impl Proposal {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let chol = if cov.iter().all(|v| *v == 0.0) {
            cov
        } else {
            cov.cholesky()
                .ok_or_else(|| Error::invalid("proposal covariance must be positive definite"))?
                .unpack()
        };
        Ok(Self { chol, log_scale: 0.0 })
    }

    pub fn diagonal(dim: usize, sd: f64) -> Self {
        Self {
            chol: DMatrix::identity(dim, dim) * sd,
            log_scale: 0.0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Effective covariance `s² LL'`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let s2 = (2.0 * self.log_scale).exp();
        &self.chol * self.chol.transpose() * s2
    }

    pub fn step<R: Rng + ?Sized>(&self, y: &[f64], rng: &mut R) -> Vec<f64> {
        let k = y.len();
        let eps = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = &self.chol * eps * self.scale();
        y.iter().zip(d.iter()).map(|(a, b)| a + b).collect()
    }

    /// One Robbins-Monro step on `ln s` towards the target acceptance.
    pub fn adapt(&mut self, accept_prob: f64, target: f64, gain: f64) {
        self.log_scale += gain * (accept_prob - target);
    }
}

/// Outcome of one block update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockUpdate {
    pub params: ParamSet,
    pub accepted: bool,
    /// `min(1, ratio)` for the proposal made.
    pub accept_prob: f64,
}

/// Metropolis-Hastings step for `θ` given the complete field `z`, with
/// `(σ², μ)` redrawn from their conditionals on acceptance and left alone
/// otherwise.
#[allow(clippy::too_many_arguments)]
pub fn param_block_update<R: Rng + ?Sized>(
    z: &[f64],
    current: &ParamSet,
    data: &Dataset,
    spec: &ModelSpec,
    prior: &Prior,
    coords: &WalkCoords,
    proposal: &Proposal,
    rng: &mut R,
) -> Result<BlockUpdate> {
    let emb = &data.emb;
    let fft = crate::bccb::Fft2::get(emb.n1, emb.n2);
    let fp = FieldPower::new(z, &fft)?;
    let k_cur = theta_log_kernel(&current.theta, &fp, emb, &spec.model, prior, spec.free);
    let y = coords.to_walk(&current.theta);
    let theta_new = coords.from_walk(&proposal.step(&y, rng), &current.theta);
    let k_new = theta_log_kernel(&theta_new, &fp, emb, &spec.model, prior, spec.free);
    let log_ratio = if k_new == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        k_new - k_cur + coords.log_jacobian(&theta_new) - coords.log_jacobian(&current.theta)
    };
    let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
    let u: f64 = rng.random();
    if u < accept_prob {
        let spectrum = spectrum_at(emb, &spec.model, &theta_new)?;
        let (sigma2, mu) = PosteriorKernelParts::new(&fp, &spectrum)?.draw_sigma2_mu(rng)?;
        Ok(BlockUpdate {
            params: ParamSet {
                mu,
                sigma2,
                theta: theta_new,
            },
            accepted: true,
            accept_prob,
        })
    } else {
        Ok(BlockUpdate {
            params: *current,
            accepted: false,
            accept_prob,
        })
    }
}

/// Welford running mean and variance at every embedding site.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSummary {
    pub count: usize,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl FieldSummary {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, z: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(z) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Sample variance (divisor `count − 1`).
    pub fn variance(&self) -> Vec<f64> {
        let d = (self.count.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / d).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Draw {
    pub iter: usize,
    pub mu: f64,
    pub sigma2: f64,
    pub theta: Theta,
    pub accepted: bool,
    pub pcg_iters: usize,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub start: ParamSet,
    /// Post-burn-in draws.
    pub draws: Vec<Draw>,
    /// Acceptance rate after burn-in.
    pub accept_rate: f64,
    pub burn_in_accept_rate: f64,
    pub field: FieldSummary,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    /// PCG iterations of every imputation, burn-in included.
    pub pcg_iters: Vec<usize>,
    pub unconverged: usize,
    pub proposal_cov: DMatrix<f64>,
}

/// Names of the traced quantities, in [`Chain::trace`] order.
pub const TRACE_NAMES: [&str; 5] = ["mu", "sigma2", "lambda", "shape", "c"];

impl Chain {
    pub fn trace(&self, name: &str) -> Option<Vec<f64>> {
        let pick: fn(&Draw) -> f64 = match name {
            "mu" => |d| d.mu,
            "sigma2" => |d| d.sigma2,
            "lambda" => |d| d.theta.lambda,
            "shape" => |d| d.theta.shape,
            "c" => |d| d.theta.nugget,
            _ => return None,
        };
        Some(self.draws.iter().map(pick).collect())
    }

    pub fn posterior_mean(&self) -> ParamSet {
        let m = |n: &str| {
            let t = self.trace(n).expect("known trace");
            t.iter().sum::<f64>() / t.len().max(1) as f64
        };
        ParamSet::new(m("mu"), m("sigma2"), m("lambda"), m("shape"), m("c"))
    }
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Variance of the sample mean from the spectral density at zero of an
/// autoregression fitted by Yule-Walker, order chosen by AIC.
fn ar_mean_variance(x: &[f64]) -> f64 {
    let n = x.len();
    let nf = n as f64;
    let m = x.iter().sum::<f64>() / nf;
    let max_order = ((10.0 * nf.log10()) as usize).min(n - 1);
    let acov: Vec<f64> = (0..=max_order)
        .map(|k| (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / nf)
        .collect();
    if !(acov[0] > 0.0) {
        return 0.0;
    }
    // Levinson-Durbin, keeping the best order seen so far.
    let mut phi: Vec<f64> = Vec::new();
    let mut v = acov[0];
    let mut best = (nf * v.ln(), v, 0.0);
    for p in 1..=max_order {
        let k = (acov[p] - phi.iter().enumerate().map(|(j, f)| f * acov[p - 1 - j]).sum::<f64>()) / v;
        let prev = phi.clone();
        phi.push(k);
        for j in 0..p - 1 {
            phi[j] = prev[j] - k * prev[p - 2 - j];
        }
        v *= 1.0 - k * k;
        if !(v > 0.0) {
            break;
        }
        let aic = nf * v.ln() + 2.0 * p as f64;
        if aic < best.0 {
            best = (aic, v, phi.iter().sum());
        }
    }
    let (_, v, s) = best;
    v / ((1.0 - s) * (1.0 - s)) / nf
}

/// Geweke diagnostic: mean of the first 10% against the last 50%, each
/// standard error from an autoregressive spectral estimate at zero.
/// Constant traces give 0.
pub fn geweke_z(trace: &[f64]) -> f64 {
    let n = trace.len();
    let a = &trace[..n / 10];
    let b = &trace[n - n / 2..];
    if a.len() < 4 || b.len() < 4 {
        return f64::NAN;
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let v = ar_mean_variance(a) + ar_mean_variance(b);
    let d = mean(a) - mean(b);
    if v > 0.0 {
        d / v.sqrt()
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Runs the sampler from `init` or from the method-of-moments start.
pub fn gibbs_run(data: &Dataset, spec: &ModelSpec, cfg: &McmcConfig, init: Option<ParamSet>) -> Result<Chain> {
    let coords = WalkCoords::new(spec, cfg.shape_proposal);
    let dim = coords.dim();
    cfg.validate(dim)?;
    let start = match init {
        Some(p) => {
            let p = ParamSet {
                theta: spec.with_free(&p.theta),
                ..p
            };
            check_start(data, spec, &p)?;
            p
        }
        None => method_of_moments(data, spec)?,
    };
    if cfg.prior.log_density(spec.model.family.as_ref(), &start.theta, spec.free) == f64::NEG_INFINITY {
        return Err(Error::Initialization("starting value outside the prior support".into()));
    }
    let mut proposal = match &cfg.proposal_cov {
        Some(c) => Proposal::new(cov_matrix(c, dim)?)?,
        None => Proposal::diagonal(dim, cfg.initial_sd),
    };
    let streams = RandomStreams::new(cfg.seed);
    let mut impute_rng = streams.stream("imputation", 0);
    let mut mh_rng = streams.stream("proposal", 0);
    let cache = OperatorCache::new(data, &cfg.solver)?;
    let mut sampler = PairedSampler::new();

    let mut p = start;
    let mut ops: Option<Operators> = None;
    let mut z = data.mask.scatter(&data.z_o);
    if !data.mask.is_full() {
        // Any start will do for the unobserved sites; use the kriging mean.
        let o = cache.build(data, &spec.model, &p.theta)?;
        let (m, _) = crate::simulate::conditional_mean(
            &data.z_o,
            &data.mask,
            &o.spectrum,
            p.mu,
            o.precond.as_ref(),
            &cfg.solver.pcg,
        )?;
        z = m;
        ops = Some(o);
    }

    let post = cfg.iterations - cfg.burn_in;
    let snap_at: Vec<usize> = (1..=cfg.snapshots)
        .map(|k| cfg.burn_in + k * post / (cfg.snapshots + 1))
        .collect();
    let mut chain = Chain {
        start,
        draws: Vec::with_capacity(post),
        accept_rate: 0.0,
        burn_in_accept_rate: 0.0,
        field: FieldSummary::new(data.emb.len()),
        snapshots: Vec::new(),
        pcg_iters: Vec::with_capacity(cfg.iterations),
        unconverged: 0,
        proposal_cov: proposal.covariance(),
    };
    // Burn-in: scale adaptation throughout, plus one switch to the
    // empirical covariance of the walk coordinates halfway through.
    let mut walk_hist: Vec<Vec<f64>> = Vec::new();
    let mut adapt_t = 0usize;
    let mut accepted_burn = 0usize;
    let mut accepted_post = 0usize;

    for it in 0..cfg.iterations {
        let mut iters = 0;
        if !data.mask.is_full() {
            if ops.is_none() {
                ops = Some(cache.build(data, &spec.model, &p.theta)?);
            }
            let o = ops.as_ref().expect("operators just built");
            let d = sampler.draw(
                &data.z_o,
                &data.mask,
                &o.spectrum,
                &p,
                o.precond.as_ref(),
                &cfg.solver.pcg,
                &mut impute_rng,
            )?;
            iters = d.solver_iters;
            chain.unconverged += usize::from(!d.converged);
            for (&k, &v) in data.mask.unobserved.iter().zip(&d.z_u) {
                z[k] = v;
            }
        }
        chain.pcg_iters.push(iters);

        let upd = param_block_update(&z, &p, data, spec, &cfg.prior, &coords, &proposal, &mut mh_rng)?;
        if upd.accepted {
            p = upd.params;
            ops = None;
        }

        if it < cfg.burn_in {
            accepted_burn += usize::from(upd.accepted);
            if cfg.adapt && dim > 0 {
                adapt_t += 1;
                proposal.adapt(upd.accept_prob, cfg.target_accept, 1.0 / (adapt_t as f64).powf(0.6));
                if it >= cfg.burn_in / 4 {
                    walk_hist.push(coords.to_walk(&p.theta));
                }
                if it + 1 == cfg.burn_in / 2 {
                    if let Some(np) = empirical_proposal(&walk_hist, dim) {
                        proposal = np;
                        adapt_t = 0;
                    }
                }
            }
        } else {
            accepted_post += usize::from(upd.accepted);
            chain.draws.push(Draw {
                iter: it + 1,
                mu: p.mu,
                sigma2: p.sigma2,
                theta: p.theta,
                accepted: upd.accepted,
                pcg_iters: iters,
            });
            chain.field.push(&z);
            if snap_at.contains(&(it + 1)) {
                chain.snapshots.push((it + 1, z.clone()));
            }
        }
    }
    chain.accept_rate = accepted_post as f64 / post as f64;
    chain.burn_in_accept_rate = if cfg.burn_in > 0 {
        accepted_burn as f64 / cfg.burn_in as f64
    } else {
        f64::NAN
    };
    chain.proposal_cov = proposal.covariance();
    Ok(chain)
}

/// `(2.38²/d)·Σ̂` from the walk history, when it has spread in every
/// direction.
fn empirical_proposal(hist: &[Vec<f64>], dim: usize) -> Option<Proposal> {
    if hist.len() < 10 * dim.max(2) {
        return None;
    }
    let n = hist.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|d| hist.iter().map(|h| h[d]).sum::<f64>() / n).collect();
    let cov = DMatrix::from_fn(dim, dim, |i, j| {
        hist.iter()
            .map(|h| (h[i] - mean[i]) * (h[j] - mean[j]))
            .sum::<f64>()
            / (n - 1.0)
    });
    if cov.diagonal().iter().any(|v| !(*v > 1e-10)) {
        return None;
    }
    let cov = cov * (2.38 * 2.38 / dim as f64);
    Proposal::new(cov).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptation_direction() {
        let mut p = Proposal::diagonal(2, 0.1);
        p.adapt(1.0, 0.35, 0.5);
        assert!(p.scale() > 1.0);
        let mut p = Proposal::diagonal(2, 0.1);
        p.adapt(0.0, 0.35, 0.5);
        assert!(p.scale() < 1.0);
    }

    #[test]
    fn geweke_flags_trend_not_noise() {
        let flat: Vec<f64> = (0..2000).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        assert!(geweke_z(&flat).abs() < 3.0);
        let trend: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0 + 0.01 * ((i * 13) % 7) as f64).collect();
        assert!(geweke_z(&trend).abs() > 3.0);
        assert_eq!(geweke_z(&[1.0; 100]), 0.0);
    }

    #[test]
    fn welford_matches_two_pass() {
        let rows = [vec![1.0, 2.0], vec![3.0, -1.0], vec![2.0, 0.5]];
        let mut s = FieldSummary::new(2);
        for r in &rows {
            s.push(r);
        }
        assert!((s.mean[0] - 2.0).abs() < 1e-15);
        assert!((s.variance()[0] - 1.0).abs() < 1e-15);
        let m1 = 1.5 / 3.0;
        let v1 = rows.iter().map(|r| (r[1] - m1).powi(2)).sum::<f64>() / 2.0;
        assert!((s.variance()[1] - v1).abs() < 1e-14);
    }

    #[test]
    fn quantiles() {
        let x = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert!((quantile(&x, 0.5) - 2.5).abs() < 1e-15);
    }
}
