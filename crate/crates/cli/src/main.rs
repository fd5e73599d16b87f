//! `gridopt <subcommand> [--config FILE] [--workers N] [--seed S] [--out DIR]`
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on invalid input and 3 on
//! numerical failure. Failures print a JSON object on stderr and, when the
//! output directory exists, write it to `error.json` there.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use gridopt::workers::WorkerPool;

use crate::commands::Ctx;
use crate::config::{BenchTarget, RunConfig};
use crate::error::CliError;
use crate::manifest::Manifest;

pub const WORKERS_ENV: &str = "GRIDOPT_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "gridopt", version, about = "Distribution-grid forecasting, OPF, reconfiguration and scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// worker threads; falls back to the config, then GRIDOPT_WORKERS
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// root seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Train the SVR forecaster and forecast the held-out part of the series
    Forecast,
    /// Two-step hyper-parameter search, then forecast with the tuned model
    Tune,
    /// Loss-minimizing reconfiguration over all radial switch states
    Reconfig,
    /// Three-phase OPF with and without regulation headroom
    Opf3,
    /// Single Gaussian, fixed-k mixture and GAEM fits of forecast errors
    FitErrors,
    /// Chance-constrained day-ahead schedule
    Schedule,
    /// Monte-Carlo check of a schedule's chance constraints
    Validate,
    /// OLS and FGLS regression
    Regress,
    /// Run a pipeline at several worker counts and report speedups
    Benchmark {
        #[arg(long, value_enum)]
        target: Option<BenchTarget>,
    },
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Forecast => "forecast",
            Command::Tune => "tune",
            Command::Reconfig => "reconfig",
            Command::Opf3 => "opf3",
            Command::FitErrors => "fit-errors",
            Command::Schedule => "schedule",
            Command::Validate => "validate",
            Command::Regress => "regress",
            Command::Benchmark { .. } => "benchmark",
        }
    }
}

fn resolve_workers(flag: Option<usize>, cfg: Option<usize>, env: Option<String>) -> Result<usize, CliError> {
    let n = match (flag, cfg, env) {
        (Some(n), _, _) | (None, Some(n), _) => n,
        (None, None, Some(v)) => {
            v.trim().parse().map_err(|_| CliError::usage(format!("{WORKERS_ENV}={v:?} is not a worker count")))?
        }
        (None, None, None) => std::thread::available_parallelism().map(usize::from).unwrap_or(1),
    };
    if n == 0 {
        return Err(CliError::usage("worker count must be at least 1"));
    }
    Ok(n)
}

fn run(cli: Cli, out_dir: &mut Option<PathBuf>) -> Result<(), CliError> {
    let start = Instant::now();
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let workers = resolve_workers(cli.workers, cfg.workers, std::env::var(WORKERS_ENV).ok())?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("gridopt-out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    *out_dir = Some(out.clone());
    cfg.workers = Some(workers);
    cfg.seed = Some(seed);
    cfg.out = Some(out.clone());

    let mut inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
    inputs.extend(cfg.inputs.all().into_iter().map(PathBuf::from));
    let refs: Vec<&std::path::Path> = inputs.iter().map(PathBuf::as_path).collect();
    let (digests, inputs_hash) = manifest::digest_inputs(&refs)?;

    let pool = WorkerPool::new(workers)?;
    let mut ctx = Ctx { cfg, seed, pool, out: out.clone(), outputs: Vec::new() };
    log::info!("{} with {workers} workers, seed {seed}", cli.command.name());
    let result = match cli.command {
        Command::Forecast => commands::forecast(&mut ctx),
        Command::Tune => commands::tune(&mut ctx),
        Command::Reconfig => commands::reconfig(&mut ctx),
        Command::Opf3 => commands::opf3(&mut ctx),
        Command::FitErrors => commands::fit_errors(&mut ctx),
        Command::Schedule => commands::schedule(&mut ctx),
        Command::Validate => commands::validate(&mut ctx),
        Command::Regress => commands::regress(&mut ctx),
        Command::Benchmark { target } => commands::benchmark(&mut ctx, target),
    };
    let m = Manifest {
        command: cli.command.name().to_string(),
        seed,
        workers,
        inputs: digests,
        inputs_hash,
        config: ctx.cfg.clone(),
        cli_version: env!("CARGO_PKG_VERSION").to_string(),
        core_version: gridopt::VERSION.to_string(),
        outputs: ctx.outputs.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    m.write(&out)?;
    result
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = e.print();
                eprintln!("{}", CliError::usage(e.kind().to_string()).to_json());
                1
            } else {
                let _ = e.print();
                0
            };
            std::process::exit(code);
        }
    };
    let mut out_dir = None;
    if let Err(e) = run(cli, &mut out_dir) {
        let text = e.to_json();
        eprintln!("{text}");
        if let Some(dir) = out_dir {
            let _ = std::fs::write(dir.join("error.json"), format!("{text}\n"));
        }
        std::process::exit(e.exit_code);
    }
}
