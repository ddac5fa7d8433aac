//! `ridgefe` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};


#[derive(Parser, Debug)]
#[command(name = "ridgefe", version, about = "Ridge two-way fixed effects on bipartite networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, short, default_value = "out")]
    pub out_dir: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Progress messages on stderr.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a network and outcome panel from a block model.
    Simulate(CommonArgs),
    /// Fit OLS, debiased OLS or ridge on a panel.
    Estimate(CommonArgs),
    /// Variance decomposition table with out-of-sample MSE.
    Decompose(CommonArgs),
    /// Grid search of the ridge penalties.
    Cv(CommonArgs),
    /// Monte Carlo check of the concentration bounds.
    Bounds(CommonArgs),
    /// Network and decomposition tables averaged over seeds.
    Report(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Cv(a) => commands::cv(a),
        Command::Bounds(a) => commands::bounds(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
