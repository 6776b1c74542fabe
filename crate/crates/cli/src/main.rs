use std::process::ExitCode;

use clap::Parser;
use ran_cli::args::Cli;
use ran_cli::commands;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match commands::dispatch(cli, argv) {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::DomainFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
