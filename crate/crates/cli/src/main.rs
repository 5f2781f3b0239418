use std::process::ExitCode;

use causal_segments_cli::commands;
use causal_segments_cli::config::{Overrides, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "causeg", version, about = "Causal segment discovery with doubly robust CATE estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-fit nuisances, cache them and write the segment CATE table.
    Calculate(#[command(flatten)] Overrides),
    /// Test segments against theta and learn a treatment rule from the cache.
    Segment(#[command(flatten)] Overrides),
    /// Estimate value, OTE and HTE of the rule from the cache.
    Assess(#[command(flatten)] Overrides),
    /// Generate a synthetic dataset and its oracle truths.
    Simulate(#[command(flatten)] Overrides),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (flags, run): (&Overrides, fn(&RunConfig) -> _) = match &cli.command {
        Command::Calculate(f) => (f, commands::calculate),
        Command::Segment(f) => (f, commands::segment),
        Command::Assess(f) => (f, commands::assess),
        Command::Simulate(f) => (f, commands::simulate),
    };
    match RunConfig::resolve(flags).and_then(|cfg| run(&cfg)) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
