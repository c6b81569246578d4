//! cse: batch front end for region-wide error guarantees over simulated
//! designs. Subcommands map one-to-one onto the core workflows; every
//! artifact embeds the resolved config and seed so runs can be reproduced
//! exactly.

mod config;
mod emit;
mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cse",
    version,
    about = "Region-wide Type I Error bands and calibrated thresholds for simulated designs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; see the README for the schema.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory artifacts are written into (default: the config's
    /// out_dir, then the working directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the config's master_seed; provenance records the value
    /// actually used.
    #[arg(long, global = true, value_name = "SEED")]
    pub seed: Option<u64>,
    /// Worker thread count (default: CSE_THREADS, then all cores).
    /// Outputs never depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Adaptive refinement rounds, overriding the config's adaptive.rounds.
    #[arg(long, global = true, value_name = "K")]
    pub adaptive_rounds: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Band the Type I Error of a fixed design over the whole null region.
    Validate,
    /// Find the largest rejection threshold that provably keeps the design
    /// level-alpha over the whole null region.
    Calibrate,
    /// Tabulate the optimized transfer bound against analytic and baseline
    /// curves along a displacement scan.
    Bound,
    /// Build the tiling and emit its geometry without simulating.
    Grid,
    /// Invert calibrated per-tile tests at observed data into a confidence
    /// set.
    Confset {
        /// calibration.json produced by `cse calibrate`.
        #[arg(long, value_name = "PATH")]
        calibration: PathBuf,
        /// Observed outcomes as JSON, e.g. {"kind": "z_scores", "data": [0.4]}.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run::dispatch(&cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
