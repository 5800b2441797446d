use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use extra_tilt::{Error, Result};
use extra_tilt_cli::commands::{self, WeightSource};
use extra_tilt_cli::{exit_code, RunConfig};

/// Importance weights for selection-biased data with exponential tilt
/// reweighting.
#[derive(Parser)]
#[command(name = "extra-tilt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the simulation, training and fitting seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an auction stream and split it into source and target.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Sample a discrete population JSON into source and target CSVs.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        population: PathBuf,
        /// Rows per domain; overrides the config's `n_stream`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit tilt parameters and per-row source weights.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Classifier JSON; a logistic classifier is trained when absent.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Report unweighted and reweighted source risk.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        #[arg(long, required_unless_present = "params")]
        weights: Option<PathBuf>,
        /// params.json to compute weights from when no weights file is given.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        classifier: PathBuf,
        /// Labeled target sample for the true target risk.
        #[arg(long)]
        labeled_target: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Invalid("no output directory: pass --out or set \"out\"".into()))?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Simulate { common } => {
            let (cfg, out) = resolve(&common)?;
            commands::simulate(&cfg, &out)
        }
        Command::Sample { common, population, n } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(n) = n {
                cfg.n_stream = n;
                cfg.validate()?;
            }
            commands::sample(&cfg, &population, &out)
        }
        Command::Fit { common, source, target, classifier } => {
            let (cfg, out) = resolve(&common)?;
            commands::fit(&cfg, &source, &target, classifier.as_deref(), &out)
        }
        Command::Evaluate { common, source, weights, params, classifier, labeled_target } => {
            let (cfg, out) = resolve(&common)?;
            let weights = match (&weights, &params) {
                (Some(w), _) => WeightSource::File(w),
                (None, Some(p)) => WeightSource::Params(p),
                (None, None) => unreachable!("clap requires one of them"),
            };
            commands::evaluate(&cfg, &source, weights, &classifier, labeled_target.as_deref(), &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", Path::new(&f).display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
