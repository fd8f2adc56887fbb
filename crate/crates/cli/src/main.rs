//! `vasculo`: batch front end for fundus preparation, vascular feature
//! extraction and evaluation.

mod config;
mod eval;
mod extract;
mod io;
mod prep_cmd;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "vasculo", version, about = "Retinal vessel feature pipeline")]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads, overriding the config (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect fundus bounds, normalize to 1024² and enhance contrast.
    Prep {
        /// Directory of color fundus photographs.
        images: PathBuf,
    },
    /// Compute vascular features from artery/vein masks into features.csv.
    Extract {
        /// Directory of `<id>.png` masks or `<id>_artery.png` + `<id>_vein.png` pairs.
        masks: PathBuf,
        /// Directory of `<id>_bounds.json` records from `prep`.
        #[arg(long)]
        bounds: Option<PathBuf>,
        /// Directory of `<id>.png` optic disc masks.
        #[arg(long)]
        disc: Option<PathBuf>,
        /// CSV of `image_id,x,y` fovea positions in the mask frame.
        #[arg(long)]
        fovea: Option<PathBuf>,
    },
    /// Score predicted masks and features against ground truth.
    Eval {
        /// Ground-truth mask directory, optionally with features.csv and fovea.csv.
        #[arg(long)]
        gt: PathBuf,
        /// Prediction directory per system; the first is the reference for significance.
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        /// CSV with image_id, group_id, quality, region.
        #[arg(long)]
        metadata: PathBuf,
    },
    /// Print the effective configuration as JSON.
    Config {
        /// Print built-in defaults instead of the loaded configuration.
        #[arg(long)]
        print_defaults: bool,
    },
}

/// Per-item tally of a batch command.
#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub total: usize,
    pub failures: usize,
}

impl Outcome {
    pub fn new(total: usize, failures: usize) -> Self {
        Self { total, failures }
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.context("--out is required")
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .context("starting worker pool")?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Prep { images } => prep_cmd::run(images, require_out(out)?, &cfg),
        Command::Extract {
            masks,
            bounds,
            disc,
            fovea,
        } => extract::run(
            &extract::ExtractArgs {
                masks,
                bounds: bounds.as_deref(),
                disc: disc.as_deref(),
                fovea: fovea.as_deref(),
            },
            require_out(out)?,
            &cfg,
        ),
        Command::Eval { gt, preds, metadata } => {
            eval::run(&eval::EvalArgs { gt, preds, metadata }, require_out(out)?, &cfg)
        }
        Command::Config { print_defaults } => {
            let shown = if *print_defaults { RunConfig::default() } else { cfg };
            println!("{}", serde_json::to_string_pretty(&shown)?);
            Ok(Outcome::new(0, 0))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(o) if o.failures == 0 => ExitCode::SUCCESS,
        Ok(o) => {
            log::warn!("{} of {} items failed", o.failures, o.total);
            ExitCode::from(2)
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
