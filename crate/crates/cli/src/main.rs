use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tpg_core::{ErrorKind, TpgError};

mod commands;
mod manifest;

/// Low-rank tensor regression with subsampled tensor projected gradient.
#[derive(Parser, Debug)]
#[command(name = "tpg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic problem (x, y, w_true, noise and a manifest).
    Gen {
        /// Synthetic spec JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Which run of the spec to generate.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Fit a model manifest; writes w.dtnsr and report.json.
    Fit {
        manifest: PathBuf,
        /// Solver config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FitMethod::Tpg)]
        method: FitMethod,
        /// Tucker rank, shared (`2`) or per mode (`3,2,2`).
        #[arg(long)]
        rank: Option<String>,
        /// Overrides the solver seed and the sketch seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a benchmark grid; writes CSV plus a JSON twin.
    Bench {
        /// Experiment spec JSON.
        #[arg(long)]
        config: PathBuf,
        /// Grid JSON merged over the spec (methods, sketch_grid, ...).
        #[arg(long)]
        grid: Option<PathBuf>,
        /// CSV path; the CSV goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply a sketch along mode 0 of a tensor file.
    Sketch {
        input: PathBuf,
        /// Sketch spec JSON (`{"K", "N", "seed", "kind"}`, `N = 0` infers).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Turn a CSV into tensor files and a model manifest.
    Ingest {
        input: PathBuf,
        /// Ingest schema JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Laplacian weight of the series model.
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        /// Kernel bandwidth; median station distance when absent.
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Model shape of a task dataset; the label counts when absent.
        #[arg(long, value_delimiter = ',')]
        shape: Option<Vec<usize>>,
    },
    /// Cross-validated selection of the Tucker rank.
    GridRank {
        manifest: PathBuf,
        /// Candidate ranks, each shared (`2`) or per mode (`3,2,2`).
        #[arg(long, num_args = 1.., required = true)]
        ranks: Vec<String>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitMethod {
    Tpg,
    Ols,
    Thosvd,
}

fn run(cli: Cli) -> Result<(), TpgError> {
    match cli.command {
        Command::Gen {
            config,
            out,
            seed,
            run,
        } => commands::gen(&config, &out, seed, run),
        Command::Fit {
            manifest,
            config,
            out,
            method,
            rank,
            seed,
        } => commands::fit(
            &manifest,
            config.as_deref(),
            &out,
            method,
            rank.as_deref(),
            seed,
        ),
        Command::Bench {
            config,
            grid,
            out,
            seed,
        } => commands::bench(&config, grid.as_deref(), out.as_deref(), seed),
        Command::Sketch {
            input,
            config,
            out,
            seed,
        } => commands::sketch(&input, &config, &out, seed),
        Command::Ingest {
            input,
            config,
            out,
            mu,
            bandwidth,
            shape,
        } => commands::ingest(&input, &config, &out, mu, bandwidth, shape),
        Command::GridRank {
            manifest,
            ranks,
            folds,
            config,
            out,
            seed,
        } => commands::grid_rank(
            &manifest,
            &ranks,
            folds,
            config.as_deref(),
            out.as_deref(),
            seed,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
