use std::process::ExitCode;

use clap::Parser;

use streamdebt_cli::{args::Cli, configure_threads, run, CliError};

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                // Machine-readable rejection goes to stdout for tooling.
                CliError::Config(json) => print!("{json}"),
                other => eprintln!("error: {other}"),
            }
            err.exit_code()
        }
    }
}
