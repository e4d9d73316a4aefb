mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use simplexsm::WeightKind;

use crate::commands::{BenchOverrides, DiagnoseArgs, FitOverrides, SimulateOverrides};
use crate::config::EstimatorChoice;
use crate::error::{CliError, EXIT_INPUT};

/// Score matching for compositional data on the simplex.
#[derive(Parser)]
#[command(name = "simplexsm", version)]
struct Cli {
    /// Worker threads for assembly and studies. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a proportions or counts CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_weight)]
        weight: Option<WeightKind>,
        #[arg(long)]
        ac: Option<f64>,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorChoice>,
        /// One-based rows to drop, comma separated.
        #[arg(long, value_delimiter = ',')]
        exclude_rows: Option<Vec<usize>>,
        #[arg(long)]
        force: bool,
    },
    /// Draw a dataset from a preset or configured model.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<u32>,
        #[arg(long)]
        n: Option<usize>,
        /// Multinomial total; also writes counts.csv.
        #[arg(long)]
        total: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compare observed marginals with draws from a fitted model.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        /// fit.json from `fit`, or a bare model spec.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Round simulated proportions to the 1/m grid (defaults to the common total of count data).
        #[arg(long)]
        grid: Option<u64>,
        #[arg(long, default_value_t = 100_000)]
        n_sim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also report a Dirichlet method-of-moments fit of the same data.
        #[arg(long)]
        dirichlet_baseline: bool,
        #[arg(long, value_delimiter = ',')]
        exclude_rows: Option<Vec<usize>>,
        #[arg(long)]
        force: bool,
    },
    /// Run a replicated simulation study.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<u32>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Estimator numbers 1-6, comma separated.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<u8>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Registered simulation models.
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
}

#[derive(Subcommand)]
enum PresetsAction {
    List,
}

fn parse_weight(s: &str) -> Result<WeightKind, String> {
    s.parse().map_err(|e: simplexsm::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| CliError::input("threads", e.to_string()))?;
    let written = match cli.command {
        Command::Fit { data, config, out, weight, ac, estimator, exclude_rows, force } => commands::fit(
            &data,
            config.as_deref(),
            &out,
            FitOverrides { weight, ac, estimator, exclude_rows },
            force,
        )?,
        Command::Simulate { config, preset, n, total, seed, out, force } => {
            commands::simulate(config.as_deref(), &out, SimulateOverrides { preset, n, total, seed }, force)?
        }
        Command::Diagnose { data, model, out, grid, n_sim, seed, dirichlet_baseline, exclude_rows, force } => {
            commands::diagnose(DiagnoseArgs {
                data: &data,
                model: &model,
                out: &out,
                grid,
                n_sim,
                seed,
                dirichlet_baseline,
                exclude_rows: exclude_rows.unwrap_or_default(),
                force,
            })?
        }
        Command::Bench { config, preset, n, replicates, estimators, seed, out, force } => commands::bench(
            config.as_deref(),
            &out,
            BenchOverrides { preset, n, replicates, estimators, seed },
            force,
        )?,
        Command::Presets { action: PresetsAction::List } => {
            commands::presets_list(&mut std::io::stdout().lock()).map_err(|e| CliError::io("stdout", e))?;
            return Ok(());
        }
    };
    println!("{}", written.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::input("usage", first));
            return ExitCode::from(EXIT_INPUT as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code as u8)
        }
    }
}
