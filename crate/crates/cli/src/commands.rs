use std::path::{Path, PathBuf};

use gridfit::baselines::{composite_mle, exact_mle, rmsd_study, whittle_mle, STUDY_PARAMS};
use gridfit::bench::benchmark_pcg;
use gridfit::covariance::{family, CorrelationModel, ParamSet};
use gridfit::em::mcem_run;
use gridfit::lattice::{format_mask_text, make_mask, parse_mask_text, DesignSpec, EmbeddingSpec, LatticeSpec};
use gridfit::likelihood::spectrum_at;
use gridfit::mcmc::{geweke_z, gibbs_run, quantile, TRACE_NAMES};
use gridfit::problem::{Dataset, ModelSpec};
use gridfit::rng::RandomStreams;
use gridfit::simulate::unconditional_pair;
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::grid::{base_values, read_grid, write_grid, Grid, GridHeader};

pub const COMMANDS: [&str; 8] = [
    "simulate",
    "fit-mcmc",
    "fit-em",
    "fit-cl",
    "fit-whittle",
    "fit-exact",
    "benchmark-pcg",
    "rmsd-study",
];

/// What a command leaves behind besides its files.
#[derive(Default)]
pub struct Report {
    pub outputs: Vec<String>,
    pub pcg: Option<PcgStats>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct PcgStats {
    pub solves: usize,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub unconverged: usize,
}

impl PcgStats {
    fn from_counts(counts: &[usize], unconverged: usize) -> Option<Self> {
        let solves = counts.iter().filter(|&&c| c > 0).count();
        (solves > 0).then(|| PcgStats {
            solves,
            mean_iterations: counts.iter().sum::<usize>() as f64 / solves as f64,
            max_iterations: counts.iter().copied().max().unwrap_or(0),
            unconverged,
        })
    }
}

struct Out<'a> {
    dir: &'a Path,
    report: Report,
}

impl Out<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.report.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn grid(&mut self, name: &str, grid: &Grid) -> Result<(), CliError> {
        let p = self.path(name);
        self.report.outputs.push(p.with_extension("json").file_name().unwrap().to_string_lossy().into_owned());
        write_grid(&p, grid)
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("serializable output");
        std::fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p).map_err(|e| CliError::io(&p, e))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let mut o = Out {
        dir: out,
        report: Report::default(),
    };
    match cfg.command.as_deref().unwrap_or_default() {
        "simulate" => simulate(cfg, &mut o)?,
        "fit-mcmc" => fit_mcmc(cfg, &mut o)?,
        "fit-em" => fit_em(cfg, &mut o)?,
        "fit-cl" | "fit-whittle" | "fit-exact" => fit_point(cfg, &mut o)?,
        "benchmark-pcg" => benchmark(cfg, &mut o)?,
        "rmsd-study" => study(cfg, &mut o)?,
        other => return Err(CliError::Config(format!("unknown command '{other}'"))),
    }
    Ok(o.report)
}

fn model_spec(cfg: &RunConfig, emb: &EmbeddingSpec) -> Result<ModelSpec, CliError> {
    let model = CorrelationModel::for_embedding(family(&cfg.model.family)?, emb, cfg.model.cutoff)?;
    Ok(ModelSpec {
        model,
        free: cfg.model.free,
        fixed: cfg.model.params.theta,
    })
}

fn header(emb: &EmbeddingSpec, values: &[f64], provenance: serde_json::Value) -> GridHeader {
    GridHeader {
        n1: emb.base.n1,
        n2: emb.base.n2,
        s: emb.base.s,
        missing: values.iter().filter(|v| v.is_nan()).count(),
        provenance,
    }
}

fn simulate(cfg: &RunConfig, o: &mut Out) -> Result<(), CliError> {
    let l = cfg.lattice;
    let emb = EmbeddingSpec::new(LatticeSpec::new(l.n1, l.n2, l.s)?, l.r_factor)?;
    let spec = model_spec(cfg, &emb)?;
    let truth = cfg.model.params;
    spec.model.check(&truth.theta)?;
    let design = match &cfg.io.mask {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let (n1, n2, flags) = parse_mask_text(&text).map_err(|e| CliError::io(p, e))?;
            if (n1, n2) != (l.n1, l.n2) {
                return Err(CliError::Config(format!("mask is {n1}x{n2}, lattice is {}x{}", l.n1, l.n2)));
            }
            DesignSpec::Explicit(flags)
        }
        None => cfg.design.clone(),
    };
    let streams = RandomStreams::new(cfg.seed);
    let spectrum = spectrum_at(&emb, &spec.model, &truth.theta)?;
    let (field, _) = unconditional_pair(&spectrum, &truth, &mut streams.stream("simulate", 0))?;
    let mask = make_mask(&emb, &design, &mut streams.stream("mask", 0))?;
    let complete = base_values(&emb, &field);
    let flags = mask.base_flags(&emb);
    let observed: Vec<f64> = complete.iter().zip(&flags).map(|(v, &f)| if f { *v } else { f64::NAN }).collect();
    let prov = json!({ "command": "simulate", "seed": cfg.seed, "family": cfg.model.family, "truth": truth, "design": design });
    o.grid(
        "field.csv",
        &Grid {
            header: header(&emb, &observed, prov.clone()),
            values: observed,
        },
    )?;
    o.grid(
        "complete.csv",
        &Grid {
            header: header(&emb, &complete, prov),
            values: complete,
        },
    )?;
    let p = o.path("mask.txt");
    std::fs::write(&p, format_mask_text(l.n2, &flags)).map_err(|e| CliError::io(&p, e))?;
    o.report.summary = json!({ "observed": mask.n(), "base_sites": emb.base.sites(), "embedding": [emb.n1, emb.n2] });
    info!("simulated {}x{} field, {} observed", l.n1, l.n2, mask.n());
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<(Dataset, ModelSpec), CliError> {
    let path = cfg
        .io
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("io.input must name the grid to fit".into()))?;
    let grid = read_grid(path, cfg.lattice.s)?;
    if grid.observed() < gridfit::problem::MIN_OBSERVED {
        return Err(CliError::Config(format!(
            "{} has {} observed values, at least {} required",
            path.display(),
            grid.observed(),
            gridfit::problem::MIN_OBSERVED
        )));
    }
    let data = grid.dataset(cfg.lattice.r_factor)?;
    let spec = model_spec(cfg, &data.emb)?;
    info!(
        "{}: {}x{} base, {} observed, embedding {}x{}",
        path.display(),
        data.emb.base.n1,
        data.emb.base.n2,
        data.mask.n(),
        data.emb.n1,
        data.emb.n2
    );
    Ok((data, spec))
}

#[derive(Serialize)]
struct ChainRow {
    iter: usize,
    mu: f64,
    sigma2: f64,
    lambda: f64,
    shape: f64,
    c: f64,
    accepted: u8,
    pcg_iters: usize,
}

fn fit_mcmc(cfg: &RunConfig, o: &mut Out) -> Result<(), CliError> {
    let (data, spec) = load_data(cfg)?;
    let chain = gibbs_run(&data, &spec, &cfg.algorithm.mcmc, cfg.start)?;
    let rows: Vec<ChainRow> = chain
        .draws
        .iter()
        .map(|d| ChainRow {
            iter: d.iter,
            mu: d.mu,
            sigma2: d.sigma2,
            lambda: d.theta.lambda,
            shape: d.theta.shape,
            c: d.theta.nugget,
            accepted: u8::from(d.accepted),
            pcg_iters: d.pcg_iters,
        })
        .collect();
    o.csv("chain.csv", &rows)?;

    let emb = &data.emb;
    let prov = json!({ "command": "fit-mcmc", "seed": cfg.seed });
    let mean = base_values(emb, &chain.field.mean);
    let sd: Vec<f64> = base_values(emb, &chain.field.variance()).iter().map(|v| v.max(0.0).sqrt()).collect();
    for (name, values) in [("field_mean.csv", mean), ("field_sd.csv", sd)] {
        o.grid(
            name,
            &Grid {
                header: header(emb, &values, prov.clone()),
                values,
            },
        )?;
    }
    for (k, (iter, z)) in chain.snapshots.iter().enumerate() {
        let values = base_values(emb, z);
        o.grid(
            &format!("draw_{}.csv", k + 1),
            &Grid {
                header: header(emb, &values, json!({ "command": "fit-mcmc", "seed": cfg.seed, "iter": iter })),
                values,
            },
        )?;
    }

    let mut params = serde_json::Map::new();
    for name in TRACE_NAMES {
        let tr = chain.trace(name).expect("known trace");
        let n = tr.len().max(1) as f64;
        let m = tr.iter().sum::<f64>() / n;
        let sd = (tr.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        params.insert(
            name.into(),
            json!({
                "mean": m,
                "sd": sd,
                "q025": quantile(&tr, 0.025),
                "q975": quantile(&tr, 0.975),
                "geweke_z": geweke_z(&tr),
            }),
        );
    }
    let summary = json!({
        "start": chain.start,
        "draws": chain.draws.len(),
        "accept_rate": chain.accept_rate,
        "burn_in_accept_rate": chain.burn_in_accept_rate,
        "proposal_cov": chain.proposal_cov.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "params": params,
    });
    o.json("posterior.json", &summary)?;
    o.report.pcg = PcgStats::from_counts(&chain.pcg_iters, chain.unconverged);
    o.report.summary = summary;
    info!("chain done, acceptance {:.3}", chain.accept_rate);
    Ok(())
}

#[derive(Serialize)]
struct EmRow {
    iter: usize,
    mu: f64,
    sigma2: f64,
    lambda: f64,
    shape: f64,
    #[serde(rename = "Qp")]
    qp: f64,
    pcg_total: usize,
    seconds: f64,
}

fn fit_em(cfg: &RunConfig, o: &mut Out) -> Result<(), CliError> {
    let (data, spec) = load_data(cfg)?;
    let path = mcem_run(&data, &spec, &cfg.algorithm.em, cfg.start)?;
    let rows: Vec<EmRow> = path
        .iterates
        .iter()
        .map(|it| EmRow {
            iter: it.iter,
            mu: it.params.mu,
            sigma2: it.params.sigma2,
            lambda: it.params.theta.lambda,
            shape: it.params.theta.shape,
            qp: it.qp,
            pcg_total: it.pcg_iters,
            seconds: it.seconds,
        })
        .collect();
    o.csv("em_path.csv", &rows)?;
    let summary = json!({
        "method": "em",
        "start": path.start,
        "estimate": path.estimate(),
        "iterations": path.iterates.len(),
        "converged": path.converged,
    });
    o.json("estimate.json", &summary)?;
    let counts: Vec<usize> = path.iterates.iter().map(|it| it.pcg_iters).collect();
    let sims = cfg.algorithm.em.sims.max(1);
    o.report.pcg = PcgStats::from_counts(&counts, path.iterates.iter().map(|it| it.unconverged).sum()).map(|s| PcgStats {
        solves: s.solves * sims,
        mean_iterations: s.mean_iterations / sims as f64,
        ..s
    });
    o.report.summary = summary;
    Ok(())
}

fn fit_point(cfg: &RunConfig, o: &mut Out) -> Result<(), CliError> {
    let (data, spec) = load_data(cfg)?;
    let a = &cfg.algorithm;
    let command = cfg.command.as_deref().unwrap_or_default();
    let (method, (est, objective)): (&str, (ParamSet, f64)) = match command {
        "fit-cl" => ("composite", composite_mle(&data, &spec, a.composite_cond_size, &a.simplex)?),
        "fit-whittle" => ("whittle", whittle_mle(&data, &spec, &a.simplex)?),
        _ => ("exact", exact_mle(&data, &spec, &a.simplex, a.dense_limit)?),
    };
    let summary = json!({ "method": method, "estimate": est, "objective": objective });
    o.json("estimate.json", &summary)?;
    o.report.summary = summary;
    Ok(())
}

fn benchmark(cfg: &RunConfig, o: &mut Out) -> Result<(), CliError> {
    let rows = benchmark_pcg(&cfg.benchmark)?;
    o.csv("pcg.csv", &rows)?;
    o.report.summary = json!({ "cases": rows.len() });
    Ok(())
}

#[derive(Serialize)]
struct StudyCsvRow {
    design: String,
    param: &'static str,
    #[serde(rename = "R_star")]
    r_star: f64,
    #[serde(rename = "R_em")]
    r_em: Option<f64>,
    #[serde(rename = "R_cl")]
    r_cl: Option<f64>,
    #[serde(rename = "R_whittle")]
    r_whittle: Option<f64>,
}

#[derive(Serialize)]
struct RecordRow {
    design: String,
    method: String,
    replicate: usize,
    mu: Option<f64>,
    sigma2: Option<f64>,
    lambda: Option<f64>,
    shape: Option<f64>,
    c: Option<f64>,
    seconds: f64,
    error: Option<String>,
}

fn study(cfg: &RunConfig, o: &mut Out) -> Result<(), CliError> {
    let res = rmsd_study(&cfg.study)?;
    let scaled = |row: &gridfit::baselines::StudyRow, m: &str| row.rmsd.get(m).map(|v| v * 1000.0);
    let rows: Vec<StudyCsvRow> = res
        .rows
        .iter()
        .map(|r| StudyCsvRow {
            design: r.design.clone(),
            param: r.param,
            r_star: r.r_star * 1000.0,
            r_em: scaled(r, "em"),
            r_cl: scaled(r, "composite"),
            r_whittle: scaled(r, "whittle"),
        })
        .collect();
    o.csv("study.csv", &rows)?;
    let records: Vec<RecordRow> = res
        .records
        .iter()
        .map(|r| RecordRow {
            design: r.design.clone(),
            method: r.method.clone(),
            replicate: r.replicate,
            mu: r.params.map(|p| p.mu),
            sigma2: r.params.map(|p| p.sigma2),
            lambda: r.params.map(|p| p.theta.lambda),
            shape: r.params.map(|p| p.theta.shape),
            c: r.params.map(|p| p.theta.nugget),
            seconds: r.seconds,
            error: r.error.clone(),
        })
        .collect();
    o.csv("records.csv", &records)?;
    let failed = res.records.iter().filter(|r| r.error.is_some()).count();
    o.report.summary = json!({ "params": STUDY_PARAMS, "records": res.records.len(), "failed": failed });
    Ok(())
}
