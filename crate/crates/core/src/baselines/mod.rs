//! Competing estimators behind one interface, and the replicate study
//! comparing them with the exact maximum likelihood estimate.

mod composite;
mod exact;
mod whittle;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use composite::{composite_loglik, composite_mle, composite_profile, CompositeProfile};
pub use exact::exact_mle;
pub use whittle::{aliased_density, periodogram, sampled_density, whittle_loglik, whittle_mle, whittle_profile, Periodogram, ALIASES, MAX_WRAPS};

use crate::covariance::{family, CorrelationModel, FreeParams, ParamSet};
use crate::em::{mcem_run, EmConfig, SimplexConfig};
use crate::error::{Error, Result};
use crate::lattice::{make_mask, DesignSpec, EmbeddingSpec, LatticeSpec};
use crate::likelihood::{dense_loglik, spectrum_at, DEFAULT_DENSE_LIMIT};
use crate::mcmc::{gibbs_run, McmcConfig};
use crate::problem::{Dataset, ModelSpec};
use crate::registry::Registry;
use crate::rng::RandomStreams;
use crate::simulate::standard_pair;

/// Settings for every estimator; each reads the part it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub simplex: SimplexConfig,
    pub dense_limit: usize,
    pub composite_cond_size: usize,
    pub em: EmConfig,
    pub mcmc: McmcConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            simplex: SimplexConfig::default(),
            dense_limit: DEFAULT_DENSE_LIMIT,
            composite_cond_size: 52,
            em: EmConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;
    /// Point estimate; `seed` drives any Monte Carlo inside.
    fn estimate(&self, data: &Dataset, spec: &ModelSpec, cfg: &EstimatorConfig, seed: u64) -> Result<ParamSet>;
}

struct Exact;
struct Em;
struct Composite;
struct Whittle;
struct McmcMean;

impl Estimator for Exact {
    fn name(&self) -> &'static str {
        "exact"
    }
    fn estimate(&self, data: &Dataset, spec: &ModelSpec, cfg: &EstimatorConfig, _: u64) -> Result<ParamSet> {
        Ok(exact_mle(data, spec, &cfg.simplex, cfg.dense_limit)?.0)
    }
}

impl Estimator for Em {
    fn name(&self) -> &'static str {
        "em"
    }
    fn estimate(&self, data: &Dataset, spec: &ModelSpec, cfg: &EstimatorConfig, seed: u64) -> Result<ParamSet> {
        let em = EmConfig { seed, ..cfg.em.clone() };
        Ok(mcem_run(data, spec, &em, None)?.estimate())
    }
}

impl Estimator for Composite {
    fn name(&self) -> &'static str {
        "composite"
    }
    fn estimate(&self, data: &Dataset, spec: &ModelSpec, cfg: &EstimatorConfig, _: u64) -> Result<ParamSet> {
        Ok(composite_mle(data, spec, cfg.composite_cond_size, &cfg.simplex)?.0)
    }
}

impl Estimator for Whittle {
    fn name(&self) -> &'static str {
        "whittle"
    }
    fn estimate(&self, data: &Dataset, spec: &ModelSpec, cfg: &EstimatorConfig, _: u64) -> Result<ParamSet> {
        Ok(whittle_mle(data, spec, &cfg.simplex)?.0)
    }
}

impl Estimator for McmcMean {
    fn name(&self) -> &'static str {
        "mcmc-mean"
    }
    fn estimate(&self, data: &Dataset, spec: &ModelSpec, cfg: &EstimatorConfig, seed: u64) -> Result<ParamSet> {
        let m = McmcConfig { seed, ..cfg.mcmc.clone() };
        Ok(gibbs_run(data, spec, &m, None)?.posterior_mean())
    }
}

pub fn estimator_registry() -> Registry<dyn Estimator> {
    let mut reg: Registry<dyn Estimator> = Registry::new("estimator");
    reg.register("exact", Arc::new(Exact));
    reg.register("em", Arc::new(Em));
    reg.register("composite", Arc::new(Composite));
    reg.register("whittle", Arc::new(Whittle));
    reg.register("mcmc-mean", Arc::new(McmcMean));
    reg
}

pub fn estimator(name: &str) -> Result<Arc<dyn Estimator>> {
    estimator_registry().get(name)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub design: String,
    pub method: String,
    pub replicate: usize,
    pub params: Option<ParamSet>,
    /// Dense exact loglikelihood at the estimate, when affordable.
    pub loglik: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// The study's design: simulated fields on an `n × n` base lattice with
/// side `s`, embedded with radius factor `r_factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n: usize,
    pub side: f64,
    pub r_factor: f64,
    pub cutoff: bool,
    pub family: String,
    pub truth: ParamSet,
    pub free: FreeParams,
    pub designs: Vec<DesignSpec>,
    pub replicates: usize,
    /// Compared against `exact`, which always runs.
    pub methods: Vec<String>,
    /// Score every estimate with the dense loglikelihood.
    pub score: bool,
    pub estimators: EstimatorConfig,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n: 32,
            side: std::f64::consts::FRAC_1_SQRT_2,
            r_factor: 1.5,
            cutoff: true,
            family: "powexp".into(),
            truth: ParamSet::new(0.0, 2.0, 0.141, 1.0, 0.0),
            free: FreeParams {
                lambda: true,
                shape: false,
                nugget: false,
            },
            designs: vec![DesignSpec::Complete],
            replicates: 50,
            methods: vec!["em".into(), "composite".into(), "whittle".into()],
            score: false,
            estimators: EstimatorConfig::default(),
            seed: 0,
        }
    }
}

/// One row of the summary: a design and parameter, the RMSE of the exact
/// MLE against the truth, and each method's RMSD against the exact MLE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub design: String,
    pub param: &'static str,
    pub r_star: f64,
    /// Methods without a single usable replicate are left out.
    pub rmsd: BTreeMap<String, f64>,
    /// Replicates that entered each method's RMSD.
    pub count: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub records: Vec<EstimateRecord>,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    pub fn row(&self, design: &str, param: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.design == design && r.param == param)
    }
}

pub const STUDY_PARAMS: [&str; 3] = ["sigma2", "lambda", "mu"];

fn pick(p: &ParamSet, name: &str) -> f64 {
    match name {
        "sigma2" => p.sigma2,
        "lambda" => p.theta.lambda,
        "mu" => p.mu,
        "shape" => p.theta.shape,
        "c" => p.theta.nugget,
        _ => f64::NAN,
    }
}

/// `(1/R Σ_r (a_r − b_r)²)^{1/2}` over replicates where both are present.
pub fn rmsd(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return f64::NAN;
    }
    (pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pairs.len() as f64).sqrt()
}

pub fn design_label(d: &DesignSpec) -> String {
    match d {
        DesignSpec::Complete => "complete".into(),
        DesignSpec::Random(p) => format!("random{}", (p * 100.0).round()),
        DesignSpec::Disk(p) => format!("disk{}", (p * 100.0).round()),
        DesignSpec::Explicit(_) => "file".into(),
    }
}

/// Simulates `replicates` fields at the truth, fits every method under
/// every design, and summarizes. Replicate `r` uses the same field for all
/// designs. Failed fits are recorded and left out of the summaries.
pub fn rmsd_study(cfg: &StudyConfig) -> Result<StudyResult> {
    let base = LatticeSpec::new(cfg.n, cfg.n, cfg.side)?;
    let emb = EmbeddingSpec::new(base, cfg.r_factor)?;
    let fam = family(&cfg.family)?;
    let model = CorrelationModel::for_embedding(fam, &emb, cfg.cutoff)?;
    let spec = ModelSpec {
        model,
        free: cfg.free,
        fixed: cfg.truth.theta,
    };
    let mut methods: Vec<(String, Arc<dyn Estimator>)> = vec![("exact".into(), estimator("exact")?)];
    for m in &cfg.methods {
        if m != "exact" {
            methods.push((m.clone(), estimator(m)?));
        }
    }
    let spectrum = spectrum_at(&emb, &spec.model, &cfg.truth.theta)?;
    spectrum.require_positive()?;
    let streams = RandomStreams::new(cfg.seed);
    let sd = cfg.truth.sigma2.sqrt();

    let per_rep: Vec<Vec<EstimateRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<EstimateRecord>> {
            let mut rng = streams.stream("field", r as u64);
            let (f, _) = standard_pair(&spectrum, &mut rng)?;
            let field: Vec<f64> = f.iter().map(|v| cfg.truth.mu + sd * v).collect();
            let mut out = Vec::new();
            for design in &cfg.designs {
                let label = design_label(design);
                let mut mrng = streams.stream(&format!("mask/{label}"), r as u64);
                let mask = make_mask(&emb, design, &mut mrng)?;
                let z_o = mask.gather_observed(&field);
                let data = Dataset::new(emb, mask, z_o)?;
                for (k, (name, est)) in methods.iter().enumerate() {
                    if name == "whittle" && data.complete_base().is_none() {
                        continue;
                    }
                    let clock = Instant::now();
                    let seed = streams.child("method", k as u64).child(&label, r as u64).seed() ^ cfg.seed;
                    let res = est.estimate(&data, &spec, &cfg.estimators, seed);
                    let seconds = clock.elapsed().as_secs_f64();
                    let (params, error) = match res {
                        Ok(p) => (Some(p), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    let loglik = match (&params, cfg.score) {
                        (Some(p), true) => dense_loglik(&data.z_o, &data.coords(), p, &spec.model, cfg.estimators.dense_limit).ok(),
                        _ => None,
                    };
                    out.push(EstimateRecord {
                        design: label.clone(),
                        method: name.clone(),
                        replicate: r,
                        params,
                        loglik,
                        seconds,
                        error,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<EstimateRecord> = per_rep.into_iter().flatten().collect();
    let rows = summarize(&records, cfg, &methods.iter().map(|m| m.0.clone()).collect::<Vec<_>>());
    Ok(StudyResult { records, rows })
}

fn summarize(records: &[EstimateRecord], cfg: &StudyConfig, methods: &[String]) -> Vec<StudyRow> {
    let find = |d: &str, m: &str, r: usize| {
        records
            .iter()
            .find(|x| x.design == d && x.method == m && x.replicate == r)
            .and_then(|x| x.params)
    };
    let mut rows = Vec::new();
    for design in &cfg.designs {
        let d = design_label(design);
        for param in STUDY_PARAMS {
            let truth = pick(&cfg.truth, param);
            let mut star = Vec::new();
            let mut rmsds = BTreeMap::new();
            let mut counts = BTreeMap::new();
            let mut pairs: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
            for r in 0..cfg.replicates {
                let Some(ex) = find(&d, "exact", r) else { continue };
                let e = pick(&ex, param);
                star.push((e, truth));
                for m in methods.iter().filter(|m| *m != "exact") {
                    if let Some(p) = find(&d, m, r) {
                        pairs.entry(m).or_default().push((pick(&p, param), e));
                    }
                }
            }
            for m in methods.iter().filter(|m| *m != "exact") {
                let v = pairs.get(m.as_str()).cloned().unwrap_or_default();
                counts.insert(m.clone(), v.len());
                if !v.is_empty() {
                    rmsds.insert(m.clone(), rmsd(&v));
                }
            }
            rows.push(StudyRow {
                design: d.clone(),
                param,
                r_star: rmsd(&star),
                rmsd: rmsds,
                count: counts,
            });
        }
    }
    rows
}

/// Fails unless `name` is registered; used to validate configs early.
pub fn check_methods(names: &[String]) -> Result<()> {
    let reg = estimator_registry();
    for n in names {
        if !reg.contains(n) {
            return Err(Error::UnknownStrategy {
                kind: "estimator",
                name: n.clone(),
            });
        }
    }
    Ok(())
}
