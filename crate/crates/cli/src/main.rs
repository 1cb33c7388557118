//! `trukan`: train, evaluate, benchmark, prune and inspect TruKAN models
//! from JSON configs.
//!
//! Exit codes: 0 on success, 1 for invalid input (flags, config, schema,
//! checkpoint), 2 for runtime failures such as divergence, an
//! ill-conditioned conversion or a failed gradient check.

mod commands;
mod config;
mod run;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trukan_core::analysis::{BenchModel, CountingAlloc};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError { code: 1, msg: msg.into() }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<trukan_core::Error> for CliError {
    fn from(e: trukan_core::Error) -> Self {
        use trukan_core::Error as E;
        match e {
            E::Diverged { .. } | E::NonFinite { .. } | E::IllConditioned { .. } | E::MissingGradient(_) => {
                CliError::runtime(e.to_string())
            }
            E::Io(_) => CliError::runtime(e.to_string()),
            _ => CliError::validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "trukan", version, about = "TruKAN layers: training, pruning, curves, benchmarks")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.seed=7`. Repeatable,
    /// applied in order after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory [default: $TRUKAN_OUT/<command> or runs/<command>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for training, benchmarking and the gradient suite.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Line-delimited JSON logs on stderr.
    #[arg(long, global = true)]
    pub json_logs: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Train,
    /// Evaluate a checkpoint on its data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Time training steps and count FLOPs and allocations.
    Bench {
        /// Models to compare, comma separated.
        #[arg(long, value_delimiter = ',')]
        heads: Vec<BenchModel>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Remove edges whose mean activation magnitude is below a threshold.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Sample learned edge functions into CSV and SVG.
    ExportCurves {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        edge_out: Option<usize>,
        #[arg(long)]
        edge_in: Option<usize>,
        #[arg(long)]
        include_removed: bool,
        #[arg(long)]
        samples: Option<usize>,
        /// Sampling interval as `LO,HI`.
        #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
        range: Option<(f64, f64)>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Every case (the default when no `--case` is given).
        #[arg(long, conflicts_with = "cases")]
        all: bool,
        #[arg(long = "case", value_delimiter = ',')]
        cases: Vec<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Rewrite B-spline KAN layers as truncated-power TruKAN layers.
    ConvertBasis {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
            Command::Prune { .. } => "prune",
            Command::ExportCurves { .. } => "export-curves",
            Command::Gradcheck { .. } => "gradcheck",
            Command::ConvertBasis { .. } => "convert-basis",
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(format!("empty range {lo},{hi}"))
    }
}

fn init_logging(verbose: u8, json: bool) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let mut b = env_logger::Builder::new();
    b.filter_level(level).parse_default_env();
    if json {
        b.format(|buf, rec| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": rec.level().as_str(),
                "target": rec.target(),
                "msg": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    let _ = b.try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(cli.global.verbose, cli.global.json_logs);
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.global.json_logs {
                log::error!("{}", e.msg);
            } else {
                eprintln!("error: {}", e.msg);
            }
            ExitCode::from(e.code)
        }
    }
}
