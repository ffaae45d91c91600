//! `structnode`: generate datasets, train, evaluate, ablate and filter.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "structnode", version, about = "Structured neural ODEs from partial observations")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// JSON experiment config; absent keys take the system preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Serial reduction in a fixed order.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate training and test datasets.
    Generate,
    /// Train on a dataset and save the model.
    Train {
        /// Dataset directory, `<out>/train` by default.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a saved model on a dataset.
    Eval {
        /// Model file, `<out>/model.json` by default.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset directory, `<out>/test` by default.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate once per value of the config's ablation axis.
    Ablate,
    /// Compare the filter with open-loop rollouts of a saved model.
    Ekf {
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("STRUCTNODE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let ctx = commands::Context::new(&cli.global)?;
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train { data } => commands::train(&ctx, data),
        Command::Eval { model, data } => commands::eval(&ctx, model, data),
        Command::Ablate => commands::ablate(&ctx),
        Command::Ekf { model } => commands::ekf(&ctx, model),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
