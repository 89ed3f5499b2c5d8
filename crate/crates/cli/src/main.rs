//! `fa1f`: experiment runner for the FA1f simulation laboratory.
//!
//! One experiment per invocation; parameters come from a sectioned
//! `key = value` config file, with the seed / replica count / output
//! directory overridable from the command line. All outputs are pure
//! functions of `(config, seed)`: rerunning a command reproduces its files
//! byte for byte.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::Config;

#[derive(Parser)]
#[command(name = "fa1f", about = "FA1f spin-system simulation laboratory", version)]
struct Cli {
    /// Sectioned key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Replica count; overrides `[run] replicas`.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample a Harris scheme and dump its decision marks.
    SampleScheme,
    /// Evolve one trajectory and dump its flips.
    Evolve,
    /// Evolve a coupled pair from one scheme.
    Couple,
    /// Enumerate dual paths over replicas and audit activation.
    DualAudit,
    /// Navigated hitting-time statistics against the drift bound.
    NavigateStats,
    /// Occupied-density experiment on a half-line window.
    ContactDensity,
    /// Death-time and right-edge tails of the renormalized process.
    RenormTails,
    /// Exact decay curve, spectral gap and fit on a small window.
    OracleDecay,
    /// Dual-path / good-interval encounter census.
    EncounterCensus,
    /// End-to-end activation-failure decay over a horizon grid.
    Assembly,
    /// Fit an exponential to a CSV of (x, estimate, se) rows.
    Fit,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // a failed build means the pool was already set; keep going
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            println!("{}", json!({ "error": format!("{err:#}") }));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let seed = cli.seed.unwrap_or(config.u64_or("run", "seed", 0)?);
    let replicas = match cli.replicas {
        Some(r) => r,
        None => config.usize_or("run", "replicas", 1000)?,
    };
    let ctx = commands::Context { config, seed, replicas, out: cli.out.clone() };
    match cli.command {
        Command::SampleScheme => commands::sample_scheme(&ctx),
        Command::Evolve => commands::evolve(&ctx),
        Command::Couple => commands::couple(&ctx),
        Command::DualAudit => commands::dual_audit(&ctx),
        Command::NavigateStats => commands::navigate_stats(&ctx),
        Command::ContactDensity => commands::contact_density(&ctx),
        Command::RenormTails => commands::renorm_tails(&ctx),
        Command::OracleDecay => commands::oracle_decay(&ctx),
        Command::EncounterCensus => commands::encounter_census(&ctx),
        Command::Assembly => commands::assembly(&ctx),
        Command::Fit => commands::fit(&ctx),
    }
}
