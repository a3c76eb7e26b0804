//! Command-line front end: argument parsing, layered configuration and the
//! six subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use args::{Cli, Command};
use config::RunConfig;
pub use error::{exit, CliError, CliResult};

/// Runs a parsed command line and returns the text destined for stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(a) => {
            config.apply_generate(a);
            commands::generate(&config)
        }
        Command::Preprocess(a) => {
            config.apply_preprocess(a);
            commands::preprocess_cmd(&config)
        }
        Command::Train(a) => {
            config.apply_train(a);
            commands::train(&config)
        }
        Command::Evaluate(a) => commands::evaluate_cmd(&a.runs, a.test.as_deref(), a.table.as_deref()),
        Command::Gradcheck(a) => {
            config.apply_gradcheck(a);
            commands::gradcheck(&config, a.out.as_deref())
        }
        Command::Inspect(a) => commands::inspect(&a.path),
    }
}
