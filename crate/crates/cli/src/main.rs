use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use mp3dcnn_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match mp3dcnn_cli::run(&cli) {
        Ok(out) => {
            print!("{out}");
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
