//! `wmattr`: register users, attribute decoded watermarks, evaluate bounds
//! and run simulated experiments.
//!
//! Exit codes: 0 success (for `detect`/`attribute`: detected), 1 not
//! detected, 2 error, 3 failed check (bound violation or failed `verify`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod lock;

#[derive(Parser, Debug)]
#[command(name = "wmattr", version, about = "Watermark codebooks, attribution and bound checks")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Master seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Codebook file.
    #[arg(long, global = true)]
    pub codebook: Option<PathBuf>,

    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (or file, for batch verdicts).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,

    /// Detection threshold, e.g. `0.9` or `9/10`.
    #[arg(long, global = true)]
    pub tau: Option<String>,

    /// Watermark length.
    #[arg(long, global = true)]
    pub n: Option<usize>,

    /// Selection strategy: random, bsta, nrg or a-bsta.
    #[arg(long, global = true)]
    pub strategy: Option<String>,

    /// A-BSTA recursion depth.
    #[arg(long, global = true)]
    pub depth: Option<u32>,

    #[arg(long, global = true, value_enum, default_value_t = ExecArg::Parallel)]
    pub exec: ExecArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecArg {
    Sequential,
    Parallel,
}

impl From<ExecArg> for wmattr::Exec {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Sequential => wmattr::Exec::Sequential,
            ExecArg::Parallel => wmattr::Exec::Parallel,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Assign a new user a watermark and append it to the codebook.
    Register {
        user_id: String,
    },
    /// Create a codebook of `s` users named u1..us.
    GenCodebook {
        #[arg(long)]
        s: usize,
    },
    /// Decide whether a decoded watermark (hex) is watermarked content.
    Detect(VerdictArgs),
    /// Detect and name the user a decoded watermark (hex) belongs to.
    Attribute(VerdictArgs),
    /// Evaluate the TDR/TAR lower bounds and both FDR upper bounds.
    Bounds(BoundsArgs),
    /// Run a Monte Carlo experiment and write CSV reports.
    Simulate {
        /// Number of users (ignored with --codebook).
        #[arg(long)]
        s: Option<usize>,
    },
    /// Run one experiment per value along an axis.
    Sweep {
        /// One of s, n, tau, strategy, postprocess.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        s: Option<usize>,
    },
    /// Time watermark selection.
    Bench {
        #[arg(long)]
        s: usize,
    },
    /// Run built-in oracle cross-checks.
    Verify,
}

#[derive(Args, Debug)]
pub struct VerdictArgs {
    /// Decoded watermark, hex encoded as in the codebook file.
    #[arg(required_unless_present = "batch")]
    pub hex: Option<String>,

    /// File with one hex watermark per line; writes a CSV of verdicts.
    #[arg(long, conflicts_with = "hex")]
    pub batch: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Number of users; accepts forms like 1e8.
    #[arg(long, default_value = "1")]
    pub s: String,
    #[arg(long)]
    pub alpha_min: Option<String>,
    #[arg(long)]
    pub alpha_max: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_ERROR)
        }
    }
}
