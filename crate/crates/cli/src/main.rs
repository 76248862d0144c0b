//! `mans`: train and evaluate multimodal knowledge-graph embeddings.
//!
//! Exit codes: 0 success, 1 invalid configuration or input, 2 failure during
//! a run, 3 file i/o failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mans_core::Split;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "mans", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Negative sampling strategy (normal, mans_v, mans_t, mans_h, mans_a).
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    /// Override any config key, e.g. `--set margin=6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::from_file(&self.config)?;
        for (key, value) in [
            ("strategy", &self.sampler),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("output_dir", &self.output_dir),
        ] {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        for kv in &self.sets {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("--set expects KEY=VALUE, got {kv:?}"))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, the run log and valid metrics.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Filtered link prediction for a checkpoint.
    EvalLp {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Metrics file (default: <output_dir>/metrics_lp.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one line per query: head, rel, tail, side, rank.
        #[arg(long)]
        ranks: Option<PathBuf>,
    },
    /// Triple classification for a checkpoint.
    EvalTc {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corruption seed (default: the checkpoint's seed).
        #[arg(long)]
        tc_seed: Option<u64>,
        /// Metrics file (default: <output_dir>/metrics_tc.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One training run per value of a config key; writes sweep.tsv.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Config key to vary, e.g. beta2.
        #[arg(long)]
        param: String,
        /// `start:end:step` or a comma-separated list.
        #[arg(long)]
        values: String,
        /// Run the values concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Write structural and visual embeddings as TSV.
    ExportEmbeddings {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() {
    let Ok(raw) = std::env::var("MANS_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("MANS_THREADS ignored: {e}");
            }
        }
        _ => log::warn!("MANS_THREADS={raw:?} is not a positive integer; ignored"),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => commands::train(&config.resolve()?),
        Command::EvalLp {
            config,
            checkpoint,
            split,
            out,
            ranks,
        } => commands::eval_lp(
            &config.resolve()?,
            &checkpoint,
            split,
            out.as_deref(),
            ranks.as_deref(),
        ),
        Command::EvalTc {
            config,
            checkpoint,
            tc_seed,
            out,
        } => commands::eval_tc(&config.resolve()?, &checkpoint, tc_seed, out.as_deref()),
        Command::Sweep {
            config,
            param,
            values,
            parallel,
        } => commands::sweep(&config.resolve()?, &param, &values, parallel),
        Command::ExportEmbeddings {
            config,
            checkpoint,
            out,
        } => commands::export(&config.resolve()?, &checkpoint, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
