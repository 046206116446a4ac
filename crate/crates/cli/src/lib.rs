//! Command-line driver: analytic error probability, Monte-Carlo estimation,
//! the finite-field oracle, the invariant suite and parameter sweeps.
//!
//! Outputs are deterministic byte for byte given identical inputs: JSON field
//! order is fixed by the record structs, CSV columns are fixed, and floats
//! print with 17 significant digits.

pub mod args;
pub mod commands;
pub mod output;

use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] streamdebt_core::SolverError),
    #[error("invariant suite failed: {0}")]
    SuiteFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Io { .. } => ExitCode::from(1),
            CliError::Config(_) => ExitCode::from(2),
            CliError::Solver(_) | CliError::SuiteFailed(_) => ExitCode::from(3),
        }
    }
}

/// Apply `STREAMDEBT_THREADS` to the global worker pool. Call once at startup.
pub fn configure_threads() {
    if let Ok(v) = std::env::var("STREAMDEBT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

pub fn run(cli: args::Cli) -> Result<(), CliError> {
    let rendered = commands::dispatch(&cli)?;
    match &cli.out {
        Some(path) => std::fs::write(path, &rendered.text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?,
        None => print!("{}", rendered.text),
    }
    if rendered.suite_failed {
        return Err(CliError::SuiteFailed(
            "one or more invariant checks failed; see the report".into(),
        ));
    }
    Ok(())
}
