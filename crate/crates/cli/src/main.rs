//! `gwspeed`: experiments on biased random walks over leafless
//! branching trees.
//!
//! Every subcommand reads one TOML config (see `config.rs` for the
//! schema), runs reproducibly from a mandatory master seed, and writes
//! CSV/JSON/SVG artifacts plus a digest manifest into the output
//! directory. Exit codes: 0 ok, 2 bad usage or config, 3 runtime
//! failure, 4 verification failure.

mod commands;
mod config;
mod error;
mod output;
mod plot;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser)]
#[command(
    name = "gwspeed",
    version,
    about = "Speed experiments for biased walks on leafless branching trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the walk speed of one offspring law
    Speed(CommonArgs),
    /// Compare a dominating pair through the coupled walk
    Compare(CommonArgs),
    /// Verify step tables in float and exact arithmetic
    CouplingAudit(CommonArgs),
    /// Sample regeneration blocks and tabulate their statistics
    RegenStats(CommonArgs),
    /// Exact and numeric bias thresholds for a dominating pair
    Threshold(CommonArgs),
    /// Check the fold coupling exists and validate its sampler
    EllCheck(CommonArgs),
    /// Find the generation at which the crossing ratio drops under the bias
    GenK(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment description
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Master seed (overrides the config; mandatory in one of the two)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides GWSPEED_WORKERS and the config)
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: gwspeed-out)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let (args, f): (&CommonArgs, fn(&config::Run) -> CliResult<()>) = match &cli.command {
        Command::Speed(a) => (a, commands::cmd_speed),
        Command::Compare(a) => (a, commands::cmd_compare),
        Command::CouplingAudit(a) => (a, commands::cmd_coupling_audit),
        Command::RegenStats(a) => (a, commands::cmd_regen_stats),
        Command::Threshold(a) => (a, commands::cmd_threshold),
        Command::EllCheck(a) => (a, commands::cmd_ell_check),
        Command::GenK(a) => (a, commands::cmd_gen_k),
    };
    let run = config::load(&args.config, args.seed, args.workers, args.out.clone())?;
    f(&run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gwspeed: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
