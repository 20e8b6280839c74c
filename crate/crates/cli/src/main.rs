use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = fzsl_cli::Cli::parse();
    match fzsl_cli::run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
