use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spatiotag_harness::commands;
use spatiotag_harness::config::RunConfig;

/// Sequence labeling with bagged featurized HMMs and active learning.
#[derive(Parser)]
#[command(name = "spatiotag", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set ensemble.k=3`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on data.train and write it to output.model.
    Train,
    /// Label data.input with output.model.
    Tag,
    /// Score data.predictions (or the model's output) against data.test.
    Eval,
    /// Run simulated active learning over data.pool.
    AlSimulate,
    /// Start the annotation service.
    Serve,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = RunConfig::load(cli.config.as_deref(), &cli.overrides).and_then(|config| match cli.command {
        Command::Train => commands::train(&config),
        Command::Tag => commands::tag(&config),
        Command::Eval => commands::eval(&config).map(|report| print!("{report}")),
        Command::AlSimulate => commands::al_simulate(&config).map(|table| print!("{table}")),
        Command::Serve => commands::serve(&config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
