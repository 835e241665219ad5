mod commands;
mod config;
mod error;
mod grid;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use log::{error, info};
use serde_json::json;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Simulate,
    FitMcmc,
    FitEm,
    FitCl,
    FitWhittle,
    FitExact,
    BenchmarkPcg,
    RmsdStudy,
}

impl Command {
    fn name(self) -> &'static str {
        commands::COMMANDS[self as usize]
    }
}

/// Gaussian random fields on incomplete lattices: simulate, fit by MCMC,
/// Monte Carlo EM, composite likelihood, Whittle or dense likelihood, and
/// benchmark the solvers.
#[derive(Debug, Parser)]
#[command(name = "gridfit", version)]
struct Cli {
    command: Command,
    /// JSON run configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: io.out from the config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, short)]
    verbose: bool,
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let command = cli.command.name();
    let mut cfg = config::load(cli.config.as_deref())?;
    cfg.finish(command, cli.seed)?;
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let out = cli.out.clone().or_else(|| cfg.io.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    info!("{command} -> {}", out.display());

    let clock = Instant::now();
    let report = commands::run(&cfg, &out)?;
    let wall = clock.elapsed().as_secs_f64();

    write_json(&out.join("config.json"), &cfg)?;
    let manifest = json!({
        "command": command,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_seconds": wall,
        "threads": rayon::current_num_threads(),
        "pcg": report.pcg,
        "outputs": report.outputs,
        "summary": report.summary,
        "config": cfg,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    info!("done in {wall:.2}s");
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn main() {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = execute(&cli) {
        error!("{e}");
        eprintln!("gridfit: {e}");
        std::process::exit(e.exit_code());
    }
}
