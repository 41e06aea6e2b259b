//! `mgdpr`: ingest market CSVs, build daily stock graphs, train and
//! evaluate the trend classifier.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{CliError, EXIT_CODES_HELP};

#[derive(Parser)]
#[command(name = "mgdpr", version, about = "Stock trend classification with multi-relational graph diffusion", after_help = EXIT_CODES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat JSON run configuration with dotted keys.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct Seeds {
    /// First (or only) seed; replaces the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds starting at the first seed.
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load raw CSVs, align them on one calendar and cache the panel.
    #[command(after_help = EXIT_CODES_HELP)]
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Build per-day, per-indicator stock graphs from the cached panel.
    #[command(after_help = EXIT_CODES_HELP)]
    Graph {
        #[command(flatten)]
        common: Common,
        /// Only build the graphs of the window ending at this day index.
        #[arg(long)]
        day: Option<usize>,
    },
    /// Train one model per seed; writes checkpoints and loss traces.
    #[command(after_help = EXIT_CODES_HELP)]
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
        /// Overrides train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate trained checkpoints on the test period.
    #[command(after_help = EXIT_CODES_HELP)]
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
    },
}

fn load(common: &Common) -> Result<config::Loaded, CliError> {
    config::load(&common.config, std::env::vars())
}

fn apply_seeds(loaded: &mut config::Loaded, seeds: &Seeds) {
    let first = seeds.seed.unwrap_or(loaded.config.seeds[0]);
    loaded.config.seeds = match (seeds.seed, seeds.seeds) {
        (_, Some(n)) => (first..first + n).collect(),
        (Some(s), None) => vec![s],
        (None, None) => loaded.config.seeds.clone(),
    };
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { common } => commands::ingest(&load(&common)?.config),
        Command::Graph { common, day } => commands::graph(&load(&common)?, day),
        Command::Train { common, seeds, epochs } => {
            let mut loaded = load(&common)?;
            apply_seeds(&mut loaded, &seeds);
            if let Some(e) = epochs {
                loaded.config.train.epochs = e;
            }
            loaded.config.validate()?;
            commands::train(&loaded)
        }
        Command::Eval { common, seeds } => {
            let mut loaded = load(&common)?;
            apply_seeds(&mut loaded, &seeds);
            loaded.config.validate()?;
            commands::eval(&loaded)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(error::EXIT_CONFIG as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
