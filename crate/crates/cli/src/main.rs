//! `deconv`: batch runs of the deconvolution estimators with CSV/JSON output.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{ConfigError, RunConfig};
use deconv_core::DeconvError;

#[derive(Parser, Debug)]
#[command(name = "deconv", version, about = "Kernel deconvolution experiments")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = "DECONV_THREADS")]
    threads: Option<usize>,
    /// Named scenario preset (fig31, fig31-n1000, degenerate, rates, regression, berkson).
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Fit one curve estimate.
    Estimate,
    /// Compare the minimum contrast and sinc deconvolution estimators on k / ell.
    ComparePce,
    /// Median oracle ISE over sample sizes and its log-log slope.
    Rates,
    /// Estimate |phi_U| from replicated measurements.
    Phiu,
    /// Write a simulated sample.
    Simulate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::ComparePce => "compare-pce",
            Command::Rates => "rates",
            Command::Phiu => "phiu",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    threads: usize,
    config: &'a RunConfig,
    artifacts: Vec<String>,
    summary: serde_json::Value,
    duration_secs: f64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<DeconvError>() {
        Some(e) if e.is_config_error() => 2,
        _ => 3,
    }
}

fn run(cli: &Cli) -> anyhow::Result<Option<String>> {
    let started = Instant::now();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config::config_error("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config::config_error(format!("thread pool: {e}")))?;
    }
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(cli.preset.as_deref(), cli.seed)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| {
        config::config_error(format!("cannot create output directory {}: {e}", cli.out.display()))
    })?;
    let out: &Path = &cli.out;
    let outcome = match cli.command {
        Command::Estimate => commands::estimate(&cfg, out)?,
        Command::ComparePce => commands::compare_pce(&cfg, out)?,
        Command::Rates => commands::rates(&cfg, out)?,
        Command::Phiu => commands::phiu(&cfg, out)?,
        Command::Simulate => commands::simulate(&cfg, out)?,
    };
    let manifest = RunManifest {
        command: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.scenario.as_ref().map(|s| s.seed),
        threads: rayon::current_num_threads(),
        config: &cfg,
        artifacts: outcome.artifacts.iter().map(|p| p.display().to_string()).collect(),
        summary: outcome.summary,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    deconv_core::io::write_json(&out.join("manifest.json"), &manifest)?;
    log::info!("wrote {} artifacts to {}", manifest.artifacts.len(), out.display());
    Ok(outcome.failed_check)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
