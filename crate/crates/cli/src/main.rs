//! `ivdr`: simulate, estimate and report.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 estimator
//! degeneracy. The thread count is taken from `IVDR_THREADS` when set.

mod config;
mod estimate;
mod output;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Io(String),
    Degenerate(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) | Failure::Io(_) => 2,
            Failure::Degenerate(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Degenerate(m) => write!(f, "estimation failed: {m}"),
        }
    }
}

impl From<ivdr_core::Error> for Failure {
    fn from(e: ivdr_core::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Degenerate(format!("{}: {e}", e.kind()))
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ivdr", version, about = "Doubly robust IV estimation of effect modification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo scenario described by a key = value file.
    Simulate {
        /// Scenario file; omit to use the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, e.g. `--set reps=10`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Estimate the effect curve on a CSV with columns y, z, a and covariates.
    Estimate {
        data: PathBuf,
        #[arg(long)]
        modifier: String,
        /// tsls, ivg, tmle, ivg_sl, tmle_sl or all.
        #[arg(long, default_value = "all")]
        method: String,
        /// default, if_plugin, cv_if or bootstrap.
        #[arg(long, default_value = "default")]
        variance: String,
        /// Use Super Learner nuisances for ivg and tmle.
        #[arg(long, value_enum, default_value = "off")]
        sl: Switch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "bootstrap-b", default_value_t = ivdr_core::inference::DEFAULT_BOOTSTRAP_B)]
        bootstrap_b: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a simulation summary into long-format plot data.
    Report {
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("IVDR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::Input(format!("IVDR_THREADS must be an integer >= 1, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Input(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Simulate {
            config,
            out,
            overrides,
        } => simulate::run(config.as_deref(), &out, &overrides),
        Command::Estimate {
            data,
            modifier,
            method,
            variance,
            sl,
            seed,
            bootstrap_b,
            out,
        } => estimate::run(&estimate::Args {
            data,
            modifier,
            method,
            variance,
            sl: matches!(sl, Switch::On),
            seed,
            bootstrap_b,
            out,
        }),
        Command::Report { summary, out } => report::run(&summary, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ivdr: {f}");
            ExitCode::from(f.code())
        }
    }
}
