//! Argument surface of the `streamdebt` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "streamdebt",
    about = "Slot-error analysis of random linear streaming codes over erasure relay networks",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format where both are supported.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact asymptotic slot error probability from the renewal model.
    Theory {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte-Carlo estimate from simulated erasure traces.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Timeslots to sample (defaults to the config's `slots`).
        #[arg(long)]
        slots: Option<u64>,
        /// Base seed (defaults to the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Independent shards to split the trace into.
        #[arg(long, default_value_t = 1)]
        shards: u64,
    },
    /// Cross-validate the debt classifier against exact finite-field rank.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Trace length per random instance.
        #[arg(long, default_value_t = 40)]
        horizon: u64,
        /// Number of random instances.
        #[arg(long, default_value_t = 200)]
        seeds: u64,
        /// Scripted erasure pattern (one line per slot, `hops` bits, 1 = erased);
        /// replaces the random instances.
        #[arg(long)]
        pattern: Option<PathBuf>,
    },
    /// Run the full invariant suite against a config.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Timeslot budget for the Monte-Carlo identity checks.
        #[arg(long)]
        slots: Option<u64>,
    },
    /// Evaluate the error probability along a parameter sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Swept parameter: delta | epsilon | q<l> | hops | rate | slots.
        #[arg(long)]
        param: String,
        /// Value list: `a,b,c`, an inclusive integer range `lo..hi`, or
        /// `K/N` fractions for `rate`.
        #[arg(long)]
        values: String,
        /// Add a Monte-Carlo column with this many timeslots per point.
        #[arg(long)]
        slots: Option<u64>,
        /// Base seed for the Monte-Carlo column.
        #[arg(long)]
        seed: Option<u64>,
        /// Average the Monte-Carlo column over this many seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Shards per Monte-Carlo run.
        #[arg(long, default_value_t = 1)]
        shards: u64,
    },
}
