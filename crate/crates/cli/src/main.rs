//! `hydrolab <subcommand> --config <file>`: run one experiment and write its
//! artifacts plus a manifest into the output directory.

mod config;
mod run;

use clap::{Args, Parser, Subcommand};
use config::Kind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hydrolab", version, about = "Two-scale Hamiltonian experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Effective Hamiltonian brackets on a momentum grid.
    Cell(Common),
    /// Wasserstein distance and optimal matching between two CSV clouds.
    W2(Common),
    /// Integrate the rescaled particle flow.
    Simulate(Common),
    /// Discounted resolvent of the terminal data at one configuration.
    Resolve(Common),
    /// f_N against the continuum value over a schedule of N.
    Converge(Common),
    /// The six operator values on an instance file.
    Operators(Common),
    /// Binned fields and Euler residuals of a trajectory CSV.
    Hydro(Common),
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Write into an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, env = "HYDROLAB_THREADS")]
    pub threads: Option<usize>,
    /// Root seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Cell(c) => (Kind::Cell, c),
        Command::W2(c) => (Kind::W2, c),
        Command::Simulate(c) => (Kind::Simulate, c),
        Command::Resolve(c) => (Kind::Resolve, c),
        Command::Converge(c) => (Kind::Converge, c),
        Command::Operators(c) => (Kind::Operators, c),
        Command::Hydro(c) => (Kind::Hydro, c),
    };
    match run::run(kind, &common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: {} did not converge; artifacts written", kind.name());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
