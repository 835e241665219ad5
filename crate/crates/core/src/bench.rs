//! PCG iteration counts for the conditional-simulation solve across lattice
//! sizes, designs and preconditioners.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::design_label;
use crate::covariance::{family, CorrelationModel, Theta};
use crate::error::{Error, Result};
use crate::lattice::{make_mask, DesignSpec, EmbeddingSpec, LatticeSpec};
use crate::problem::{Dataset, OperatorCache, SolverSettings};
use crate::rng::RandomStreams;
use crate::simulate::standard_pair;
use crate::solver::solve_observed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcgBenchConfig {
    pub sizes: Vec<usize>,
    pub designs: Vec<DesignSpec>,
    pub preconditioners: Vec<String>,
    pub cond_sizes: Vec<usize>,
    pub side: f64,
    pub r_factor: f64,
    pub cutoff: bool,
    pub family: String,
    pub theta: Theta,
    pub tolerance: f64,
    /// Conditional simulations averaged per case.
    pub draws: usize,
    pub seed: u64,
}

impl Default for PcgBenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![32, 64, 128],
            designs: vec![DesignSpec::Complete, DesignSpec::Random(0.1), DesignSpec::Disk(0.1)],
            preconditioners: vec!["vecchia".into()],
            cond_sizes: vec![crate::solver::DEFAULT_COND_SIZE],
            side: std::f64::consts::FRAC_1_SQRT_2,
            r_factor: 1.5,
            cutoff: true,
            family: "powexp".into(),
            theta: Theta {
                lambda: 0.1,
                shape: 1.0,
                nugget: 0.01,
            },
            tolerance: 1e-5,
            draws: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcgBenchRow {
    pub lattice_size: usize,
    pub design: String,
    pub preconditioner: String,
    pub cond_size: usize,
    /// Mean over the draws.
    pub iterations: f64,
    /// Preconditioner setup plus all solves.
    pub wall_seconds: f64,
    #[serde(skip)]
    pub converged: bool,
}

/// One row per (size, design, preconditioner, conditioning size). Each
/// case solves `C_oo x = z_o − Z̃_o` for a field `z` and unconditional draws
/// `Z̃` at `theta`; the field and mask depend only on size, design and seed.
pub fn benchmark_pcg(cfg: &PcgBenchConfig) -> Result<Vec<PcgBenchRow>> {
    if cfg.draws == 0 {
        return Err(Error::invalid("draws must be positive"));
    }
    let fam = family(&cfg.family)?;
    let streams = RandomStreams::new(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let emb = EmbeddingSpec::new(LatticeSpec::new(n, n, cfg.side)?, cfg.r_factor)?;
        let model = CorrelationModel::for_embedding(fam.clone(), &emb, cfg.cutoff)?;
        model.check(&cfg.theta)?;
        for design in &cfg.designs {
            let label = design_label(design);
            let mut rng = streams.stream(&format!("bench/{label}"), n as u64);
            let mask = make_mask(&emb, design, &mut rng)?;
            let data = Dataset::new(emb, mask.clone(), vec![0.0; mask.n()])?;
            for pre in &cfg.preconditioners {
                for &m in &cfg.cond_sizes {
                    let settings = SolverSettings {
                        preconditioner: pre.clone(),
                        cond_size: m,
                        pcg: crate::solver::PcgConfig {
                            tolerance: cfg.tolerance,
                            max_iters: None,
                        },
                    };
                    let clock = Instant::now();
                    let ops = OperatorCache::new(&data, &settings)?.build(&data, &model, &cfg.theta)?;
                    let mut draw_rng = streams.stream(&format!("bench-draws/{label}"), n as u64);
                    let mut total = 0usize;
                    let mut converged = true;
                    for _ in 0..cfg.draws {
                        let (z, tilde) = standard_pair(&ops.spectrum, &mut draw_rng)?;
                        let b: Vec<f64> = mask.observed.iter().map(|&k| z[k] - tilde[k]).collect();
                        let out = solve_observed(&ops.spectrum, &mask, ops.precond.as_ref(), &b, &settings.pcg)?;
                        total += out.iterations;
                        converged &= out.converged;
                    }
                    rows.push(PcgBenchRow {
                        lattice_size: n,
                        design: label.clone(),
                        preconditioner: pre.clone(),
                        cond_size: m,
                        iterations: total as f64 / cfg.draws as f64,
                        wall_seconds: clock.elapsed().as_secs_f64(),
                        converged,
                    });
                }
            }
        }
    }
    Ok(rows)
}
