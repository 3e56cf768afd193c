//! `sfml`: learn a stochastic one-step flow map from SDE trajectory data
//! and use it as a generative surrogate.
//!
//! Pipeline: `generate` simulates training trajectories, `train` fits the
//! encoder/decoder pair, `sweep` repeats training across latent dimensions
//! to find the stochastic rank, `evaluate` compares the trained model
//! against the true system.

mod commands;
mod config;
mod errors;
mod manifest;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use errors::Result;
use sfml_core::Exec;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "sfml", version, about = "Stochastic flow map learning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output root; default: [output].directory, then $SFML_OUT, then "runs".
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Worker threads for data-parallel kernels (0 = library default).
    #[arg(long, value_name = "INT", default_value_t = 0)]
    threads: usize,
    /// Byte-reproducible artifacts: zeroed timing columns.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and build the transition-pair dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the flow-map model on an existing dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pair dataset; default: <out>/dataset/pairs.bin.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Validate the configuration and exit without touching anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Train across latent dimensions 1..=K and report the MSE plateau.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Pair dataset; default: <out>/dataset/pairs.bin.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Largest latent dimension to try.
        #[arg(long = "max-nz", value_name = "K", default_value_t = 3)]
        max_nz: usize,
    },
    /// Compare a trained model against the true system.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint; default: <out>/train/checkpoint.bin.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
}

fn output_root(cli_out: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    if let Some(out) = cli_out {
        return out.clone();
    }
    if let Some(dir) = &cfg.output.directory {
        return PathBuf::from(dir);
    }
    if let Ok(env_out) = std::env::var("SFML_OUT") {
        if !env_out.is_empty() {
            return PathBuf::from(env_out);
        }
    }
    PathBuf::from("runs")
}

fn init_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        // A failure here means a pool already exists; the default is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if threads > 1 {
        eprintln!("note: built without the parallel feature; --threads ignored");
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.sde.seed = seed;
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let ex = Exec::auto();
    match &cli.command {
        Command::Generate { common } => {
            init_threads(common.threads);
            let cfg = load(common)?;
            commands::cmd_generate(&cfg, &output_root(&common.out, &cfg), ex)
        }
        Command::Train {
            common,
            data,
            dry_run,
        } => {
            init_threads(common.threads);
            let cfg = load(common)?;
            commands::cmd_train(
                &cfg,
                &output_root(&common.out, &cfg),
                data.clone(),
                *dry_run,
                common.deterministic,
                ex,
            )
        }
        Command::Sweep {
            common,
            data,
            max_nz,
        } => {
            init_threads(common.threads);
            let cfg = load(common)?;
            commands::cmd_sweep(
                &cfg,
                &output_root(&common.out, &cfg),
                data.clone(),
                *max_nz,
                common.deterministic,
                ex,
            )
        }
        Command::Evaluate { common, model } => {
            init_threads(common.threads);
            let cfg = load(common)?;
            commands::cmd_evaluate(&cfg, &output_root(&common.out, &cfg), model.clone(), ex)
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
