mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

/// Two-compartment PK simulation, physics-informed surrogate training and
/// equation discovery.
#[derive(Parser)]
#[command(name = "pkinns", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<String>,
    /// low, medium, high or all.
    #[arg(long)]
    noise: Option<String>,
    /// blackbox or parametric.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// stlsq, gp or both.
    #[arg(long)]
    method: Option<String>,
    /// Override any configuration key, e.g. `--set x_hidden=16,16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write clean and noisy trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a simulated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding the dataset files (default: the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Recover right-hand-side expressions from a checkpoint.
    Discover {
        #[command(flatten)]
        common: Common,
        /// Default: `<out>/checkpoint.txt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write curves, derivative pairs and extrapolation error for a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Simulate, train, discover and evaluate into one run directory.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

/// Config file first, then `--set`, then the named flags.
fn resolve(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v).map_err(CliError::Config)?;
    }
    let flags = [
        ("out", &c.out),
        ("seed", &c.seed),
        ("noise", &c.noise),
        ("mode", &c.mode),
        ("epochs", &c.epochs),
        ("lr", &c.lr),
        ("method", &c.method),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v).map_err(|e| CliError::Config(format!("--{k}: {e}")))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = resolve(&common)?;
            for f in commands::simulate(&cfg, &cfg.out)? {
                println!("{}", cfg.out.join(f).display());
            }
        }
        Command::Train { common, data } => {
            let cfg = resolve(&common)?;
            let data = data.unwrap_or_else(|| cfg.out.clone());
            commands::cmd_train(&cfg, &data, &cfg.out)?;
        }
        Command::Discover { common, checkpoint } => {
            let cfg = resolve(&common)?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.out.join(commands::CHECKPOINT_FILE));
            commands::cmd_discover(&cfg, &checkpoint, &cfg.out)?;
        }
        Command::Evaluate { common, checkpoint, data } => {
            let cfg = resolve(&common)?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.out.join(commands::CHECKPOINT_FILE));
            let data = data.unwrap_or_else(|| cfg.out.clone());
            commands::cmd_evaluate(&cfg, &checkpoint, &data, &cfg.out)?;
        }
        Command::Pipeline { common } => {
            let cfg = resolve(&common)?;
            commands::cmd_pipeline(&cfg, &cfg.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
