//! `slidescape` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slidescape::ErrorClass;

use crate::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "slidescape", version, about = "Landslide susceptibility from terrain and point inventories")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flow routing, channel steepness and distance-to-channel rasters.
    Terrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Triangulate the study area and write its quadrature.
    Mesh {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit models on the full inventory and write prediction maps.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Fit only this model.
        #[arg(long)]
        model: Option<String>,
    },
    /// Cross-validate every configured model and write score tables.
    Cv {
        #[arg(long)]
        config: PathBuf,
    },
    /// Channel steepness over a grid of concavities and thresholds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic study area with a ready-made config.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
}

fn run(cli: Cli) -> slidescape::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| slidescape::Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Terrain { config } => commands::terrain(&PipelineConfig::load(&config)?),
        Command::Mesh { config } => commands::mesh(&PipelineConfig::load(&config)?),
        Command::Fit { config, model } => commands::fit_models(&PipelineConfig::load(&config)?, model.as_deref()),
        Command::Cv { config } => commands::cv(&PipelineConfig::load(&config)?),
        Command::Sweep { config } => commands::sweep(&PipelineConfig::load(&config)?),
        Command::Simulate { out, seed, size } => {
            let p = commands::simulate(&out, seed, size)?;
            println!("{}", p.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (tag, code) = match e.class() {
                ErrorClass::Config => ("config", 2),
                ErrorClass::Data => ("data", 3),
                ErrorClass::Numerical => ("numerical", 4),
            };
            eprintln!("error[{tag}]: {e}");
            ExitCode::from(code)
        }
    }
}
