use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fiberspec_cli::runner::{failure_json, summary};
use fiberspec_cli::{run, Command, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "fiberspec", version, about = "Spectral laboratory for the fiber Hamiltonian H(ξ) at fixed total momentum")]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Cache root (overrides FIBERSPEC_CACHE_DIR).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// Recompute everything; neither read nor write the cache.
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Ground state at task.xi with Hermiticity, ⟨N⟩ and Feynman–Hellmann reports.
    Ground { config: PathBuf },
    /// E(ξ) over task.xi_list, as CSV.
    Dispersion { config: PathBuf },
    /// ⟨N⟩ against log(1/σ) over task.sigma_list, with a least-squares fit.
    IrSweep { config: PathBuf },
    /// Full identity suite; single pass/fail JSON.
    Check { config: PathBuf },
    /// Mode-set audit CSV.
    DumpModes { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, path) = match cli.command {
        Sub::Ground { config } => (Command::Ground, config),
        Sub::Dispersion { config } => (Command::Dispersion, config),
        Sub::IrSweep { config } => (Command::IrSweep, config),
        Sub::Check { config } => (Command::Check, config),
        Sub::DumpModes { config } => (Command::DumpModes, config),
    };
    let cfg = match RunConfig::load(&path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for d in &cfg.defaults_applied {
        eprintln!("default: {d}");
    }
    let opts = RunOptions { out: cli.out, cache_dir: cli.cache_dir, no_cache: cli.no_cache };
    match run(command, &cfg, &opts) {
        Ok(outcome) => {
            print!("{}", summary(&outcome));
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}", failure_json(&cfg, &outcome));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {} failed: {e}", command.name());
            ExitCode::from(2)
        }
    }
}
