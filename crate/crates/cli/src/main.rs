use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod error;
mod fit;
mod io;
mod lalonde;
mod manifest;
mod model;
mod select;
mod simulate;

use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "scs", version, about = "Sparse propensity-weighted causal estimation and criterion-based selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one penalized model at a fixed lambda.
    Fit(fit::FitArgs),
    /// Choose lambda along a path by information criteria.
    Select(select::SelectArgs),
    /// Run Monte Carlo studies.
    Simulate(simulate::SimulateArgs),
    /// Compare criteria on a named-column observational dataset.
    Analyze(analyze::AnalyzeArgs),
    /// Write a synthetic job-training dataset.
    GenLalonde {
        #[arg(long, default_value_t = 445)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Fit(a) => fit::run(a),
        Command::Select(a) => select::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Analyze(a) => analyze::run(a),
        Command::GenLalonde { n, seed, out } => {
            let rows = lalonde::generate(*n, *seed);
            lalonde::write_csv(&rows, std::fs::File::create(out)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
