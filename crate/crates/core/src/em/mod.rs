//! Monte Carlo EM with a profiled M-step.
//!
//! Each E-step draws `M` conditional simulations of the complete embedding
//! field at the current parameters and the exact conditional mean `μ̃`.
//! Because `C(θ)` is BCCB the M-step needs only the mean power spectrum of
//! the centered simulations: `μ̂ = 1'μ̃/N`, `σ̂²(θ) = Ŝ²(θ)/N` and `θ̂`
//! maximizes `−(N/2) ln σ̂²(θ) − ½ ln|C(θ)|` over the free components.

mod simplex;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use simplex::{nelder_mead, SimplexConfig, SimplexResult};

use crate::bccb::power_spectrum;
use crate::covariance::{theta_from_free, theta_to_free, ParamSet, Theta};
use crate::error::{Error, Result};
use crate::likelihood::{profile_qp, EmSufficient};
use crate::problem::{method_of_moments, Dataset, ModelSpec, OperatorCache, Operators, SolverSettings};
use crate::rng::RandomStreams;
use crate::simulate::{condition_on, conditional_mean, standard_pair};
use crate::solver::PcgConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Conditional simulations per E-step.
    pub sims: usize,
    pub max_iters: usize,
    /// Relative parameter change regarded as no change.
    pub tol: f64,
    /// Consecutive iterations below `tol` required to stop.
    pub patience: usize,
    pub simplex: SimplexConfig,
    pub solver: SolverSettings,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            sims: 400,
            max_iters: 40,
            tol: 1e-3,
            patience: 3,
            simplex: SimplexConfig::default(),
            solver: SolverSettings {
                cond_size: 52,
                ..SolverSettings::default()
            },
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sims == 0 {
            return Err(Error::invalid("EM needs at least one simulation per E-step"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("EM tolerance must be positive, got {}", self.tol)));
        }
        if self.patience == 0 || self.max_iters == 0 {
            return Err(Error::invalid("EM patience and max_iters must be positive"));
        }
        self.solver.pcg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmIterate {
    pub iter: usize,
    pub params: ParamSet,
    /// `Q̂p` at the new parameters, under the E-step that produced them.
    pub qp: f64,
    pub seconds: f64,
    pub pcg_iters: usize,
    /// Conditional draws whose solve hit the iteration cap.
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmPath {
    pub start: ParamSet,
    pub iterates: Vec<EmIterate>,
    pub converged: bool,
}

impl EmPath {
    pub fn estimate(&self) -> ParamSet {
        self.iterates.last().map_or(self.start, |it| it.params)
    }
}

/// Result of one streaming E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub suff: EmSufficient,
    pub pcg_iters: usize,
    pub unconverged: usize,
}

struct PairDraw {
    fields: [Vec<f64>; 2],
    iters: usize,
    unconverged: usize,
}

fn draw_pair(data: &Dataset, ops: &Operators, p: &ParamSet, pcg: &PcgConfig, streams: &RandomStreams, j: u64) -> Result<PairDraw> {
    let mut rng = streams.stream("pair", j);
    let (a, b) = standard_pair(&ops.spectrum, &mut rng)?;
    let sd = p.sigma2.sqrt();
    let mut out = PairDraw {
        fields: [Vec::new(), Vec::new()],
        iters: 0,
        unconverged: 0,
    };
    for (slot, std_field) in [a, b].into_iter().enumerate() {
        let tilde: Vec<f64> = std_field.into_iter().map(|y| p.mu + sd * y).collect();
        let d = condition_on(&data.z_o, &tilde, &data.mask, &ops.spectrum, ops.precond.as_ref(), pcg)?;
        out.iters += d.solver_iters;
        out.unconverged += usize::from(!d.converged);
        out.fields[slot] = d.field(&data.mask, &data.z_o);
    }
    Ok(out)
}

/// Pairs processed together; their spectra are summed in index order so
/// results do not depend on thread scheduling.
const CHUNK: usize = 16;

/// `sims` conditional simulations of the complete field at `p`, with the
/// conditional mean. Pair `j` uses substream `("pair", j)` of `streams`.
pub fn e_step_fields(
    data: &Dataset,
    ops: &Operators,
    p: &ParamSet,
    pcg: &PcgConfig,
    streams: &RandomStreams,
    sims: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let (mu_tilde, _) = conditional_mean(&data.z_o, &data.mask, &ops.spectrum, p.mu, ops.precond.as_ref(), pcg)?;
    let pairs = sims.div_ceil(2) as u64;
    let drawn = (0..pairs)
        .into_par_iter()
        .map(|j| draw_pair(data, ops, p, pcg, streams, j))
        .collect::<Result<Vec<_>>>()?;
    let mut fields: Vec<Vec<f64>> = drawn.into_iter().flat_map(|d| d.fields).collect();
    fields.truncate(sims);
    Ok((fields, mu_tilde))
}

/// The E-step reduced to its sufficient statistics without storing the
/// simulations.
pub fn e_step(
    data: &Dataset,
    ops: &Operators,
    p: &ParamSet,
    pcg: &PcgConfig,
    streams: &RandomStreams,
    sims: usize,
) -> Result<EStep> {
    if sims == 0 {
        return Err(Error::invalid("E-step needs at least one simulation"));
    }
    let (mu_tilde, mean_iters) =
        conditional_mean(&data.z_o, &data.mask, &ops.spectrum, p.mu, ops.precond.as_ref(), pcg)?;
    let mu_hat = mu_tilde.iter().sum::<f64>() / mu_tilde.len() as f64;
    let fft = ops.spectrum.fft();
    let mut acc = vec![0.0; ops.spectrum.len()];
    let mut pcg_iters = mean_iters;
    let mut unconverged = 0;
    let pairs = sims.div_ceil(2);
    for start in (0..pairs).step_by(CHUNK) {
        let end = (start + CHUNK).min(pairs);
        let chunk = (start..end)
            .into_par_iter()
            .map(|j| {
                let d = draw_pair(data, ops, p, pcg, streams, j as u64)?;
                let keep = if 2 * j + 1 < sims { 2 } else { 1 };
                let spectra: Vec<Vec<f64>> = d.fields[..keep]
                    .iter()
                    .map(|f| {
                        let c: Vec<f64> = f.iter().map(|v| v - mu_hat).collect();
                        power_spectrum(fft, &c)
                    })
                    .collect();
                Ok((spectra, d.iters, d.unconverged))
            })
            .collect::<Result<Vec<_>>>()?;
        for (spectra, iters, unc) in chunk {
            pcg_iters += iters;
            unconverged += unc;
            for s in spectra {
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += v;
                }
            }
        }
    }
    let m = sims as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(EStep {
        suff: EmSufficient {
            mean_power: acc,
            mu_hat,
            sims,
        },
        pcg_iters,
        unconverged,
    })
}

/// Maximizes `Q̂p` over the free components of `θ`, starting from `start`.
pub fn m_step(
    suff: &EmSufficient,
    data: &Dataset,
    spec: &ModelSpec,
    start: &Theta,
    simplex: &SimplexConfig,
) -> Result<(ParamSet, f64)> {
    let family = spec.model.family.as_ref();
    let start = spec.with_free(start);
    let x0 = theta_to_free(family, &start, spec.free);
    let objective = |z: &[f64]| {
        let t = theta_from_free(family, z, &start, spec.free);
        profile_qp(&t, suff, &data.emb, &spec.model).qp
    };
    let r = nelder_mead(objective, &x0, simplex)?;
    let theta = theta_from_free(family, &r.x, &start, spec.free);
    let v = profile_qp(&theta, suff, &data.emb, &spec.model);
    Ok((
        ParamSet {
            mu: v.mu,
            sigma2: v.sigma2,
            theta,
        },
        v.qp,
    ))
}

/// Largest relative change over `μ` (relative to `σ`), `σ²` and the free
/// components of `θ`.
pub fn relative_change(a: &ParamSet, b: &ParamSet, spec: &ModelSpec) -> f64 {
    let rel = |x: f64, y: f64, scale: f64| (x - y).abs() / scale;
    let mut m = rel(a.mu, b.mu, a.sigma2.sqrt()).max(rel(a.sigma2, b.sigma2, a.sigma2));
    if spec.free.lambda {
        m = m.max(rel(a.theta.lambda, b.theta.lambda, a.theta.lambda));
    }
    if spec.free.shape {
        m = m.max(rel(a.theta.shape, b.theta.shape, a.theta.shape));
    }
    if spec.free.nugget {
        m = m.max(rel(a.theta.nugget, b.theta.nugget, a.theta.nugget.max(1e-3)));
    }
    m
}

/// Runs Monte Carlo EM from `init`, or from the method-of-moments start.
pub fn mcem_run(data: &Dataset, spec: &ModelSpec, cfg: &EmConfig, init: Option<ParamSet>) -> Result<EmPath> {
    cfg.validate()?;
    let start = match init {
        Some(p) => {
            let p = ParamSet {
                theta: spec.with_free(&p.theta),
                ..p
            };
            crate::problem::check_start(data, spec, &p)?;
            p
        }
        None => method_of_moments(data, spec)?,
    };
    let streams = RandomStreams::new(cfg.seed);
    let cache = OperatorCache::new(data, &cfg.solver)?;
    let mut p = start;
    let mut path = EmPath {
        start,
        iterates: Vec::new(),
        converged: false,
    };
    let mut streak = 0;
    for t in 0..cfg.max_iters {
        let clock = Instant::now();
        let ops = cache.build(data, &spec.model, &p.theta)?;
        let es = e_step(data, &ops, &p, &cfg.solver.pcg, &streams.child("e-step", t as u64), cfg.sims)?;
        let (next, qp) = m_step(&es.suff, data, spec, &p.theta, &cfg.simplex)?;
        let change = relative_change(&p, &next, spec);
        path.iterates.push(EmIterate {
            iter: t + 1,
            params: next,
            qp,
            seconds: clock.elapsed().as_secs_f64(),
            pcg_iters: es.pcg_iters,
            unconverged: es.unconverged,
        });
        p = next;
        streak = if change < cfg.tol { streak + 1 } else { 0 };
        if streak >= cfg.patience {
            path.converged = true;
            break;
        }
    }
    Ok(path)
}
