//! `dpm`: DNS generation, filtering, training and evaluation of neural LES
//! closures from one TOML configuration.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "dpm", version, about = "Adjoint-trained neural closures for LES")]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Adjoint,
    Apriori,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run every DNS case and store filtered coarse targets.
    Dns {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-filter stored fine DNS snapshots into coarse targets.
    Filter {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a neural closure on the training cases.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "adjoint")]
        mode: TrainMode,
        /// Override the configured projection setting.
        #[arg(long, value_enum)]
        divfree: Option<OnOff>,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run one closure on the test cases and write its decay curves.
    Les {
        #[arg(long)]
        config: PathBuf,
        /// no_model, smagorinsky, dynamic_smagorinsky or a model file path.
        #[arg(long)]
        closure: String,
    },
    /// Compare baselines and every trained model on the test cases.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Verify adjoint gradients against finite differences.
    Gradcheck {
        #[arg(long, conflicts_with = "les3d")]
        burgers: bool,
        #[arg(long)]
        les3d: bool,
        #[arg(long, default_value_t = 5)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Same as `gradcheck --burgers`.
    BurgersGradcheck {
        #[arg(long, default_value_t = 5)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Finite-difference error table of a stored fine snapshot.
    Diagnose {
        #[arg(long)]
        snapshot: PathBuf,
        /// Filter ratios (filter width equals sampling ratio).
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        ratios: Vec<usize>,
        /// Explicit rows as filter:sampling, e.g. 8:4.
        #[arg(long, value_delimiter = ',')]
        explicit: Vec<String>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Dns { config } => commands::dns(&config),
        Command::Filter { config } => commands::filter(&config),
        Command::Train { config, mode, divfree, resume } => {
            commands::train(&config, mode, divfree.map(|d| d == OnOff::On), resume.as_deref())
        }
        Command::Les { config, closure } => commands::les(&config, &closure),
        Command::Compare { config } => commands::compare(&config),
        Command::Gradcheck { burgers, les3d: _, hidden, seed } => commands::gradcheck(burgers, hidden, seed),
        Command::BurgersGradcheck { hidden, seed } => commands::gradcheck(true, hidden, seed),
        Command::Diagnose { snapshot, ratios, explicit, csv } => {
            commands::diagnose(&snapshot, &ratios, &explicit, csv.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('"', "'");
            eprintln!("error kind={} code={} message=\"{msg}\"", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
