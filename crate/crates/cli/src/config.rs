use std::path::{Path, PathBuf};

use gridfit::baselines::{EstimatorConfig, StudyConfig};
use gridfit::bench::PcgBenchConfig;
use gridfit::covariance::{FreeParams, ParamSet};
use gridfit::lattice::DesignSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs. Every block has defaults, so `{}` is a valid
/// config for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When present it must name the subcommand being run.
    pub command: Option<String>,
    /// The one seed; it replaces the seeds inside the algorithm,
    /// benchmark and study blocks.
    pub seed: u64,
    pub lattice: LatticeBlock,
    pub model: ModelBlock,
    /// Starting values for `fit-mcmc` and `fit-em`; method of moments
    /// when absent.
    pub start: Option<ParamSet>,
    pub design: DesignSpec,
    pub algorithm: EstimatorConfig,
    pub benchmark: PcgBenchConfig,
    pub study: StudyConfig,
    pub io: IoBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            seed: 0,
            lattice: LatticeBlock::default(),
            model: ModelBlock::default(),
            start: None,
            design: DesignSpec::Complete,
            algorithm: EstimatorConfig::default(),
            benchmark: PcgBenchConfig::default(),
            study: StudyConfig::default(),
            io: IoBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeBlock {
    pub n1: usize,
    pub n2: usize,
    /// Side length along the first axis; spacing is `s / n1`.
    pub s: f64,
    pub r_factor: f64,
}

impl Default for LatticeBlock {
    fn default() -> Self {
        Self {
            n1: 32,
            n2: 32,
            s: std::f64::consts::FRAC_1_SQRT_2,
            r_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub family: String,
    pub cutoff: bool,
    /// Truth for `simulate`; values of the fixed components for fits.
    pub params: ParamSet,
    pub free: FreeParams,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            family: "powexp".into(),
            cutoff: true,
            params: ParamSet::new(10.0, 4.0, 0.1, 1.0, 0.01),
            free: FreeParams {
                lambda: true,
                shape: true,
                nugget: false,
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoBlock {
    /// Grid CSV read by the fit commands.
    pub input: Option<PathBuf>,
    /// Mask file (`o` observed, `.` missing) that overrides `design` in
    /// `simulate`.
    pub mask: Option<PathBuf>,
    /// Output directory unless `--out` is given.
    pub out: Option<PathBuf>,
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Applies the command-line overrides and pushes the seed into every
    /// block that carries one.
    pub fn finish(&mut self, command: &str, seed: Option<u64>) -> Result<(), CliError> {
        if let Some(c) = &self.command {
            if c != command {
                return Err(CliError::Config(format!("config is for '{c}', not '{command}'")));
            }
        }
        self.command = Some(command.to_string());
        if let Some(s) = seed {
            self.seed = s;
        }
        self.algorithm.mcmc.seed = self.seed;
        self.algorithm.em.seed = self.seed;
        self.benchmark.seed = self.seed;
        self.study.seed = self.seed;
        gridfit::covariance::family(&self.model.family)?;
        gridfit::baselines::check_methods(&self.study.methods)?;
        Ok(())
    }
}
