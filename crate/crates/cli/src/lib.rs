//! Command-line front end: single edits and the benchmark workflow.

pub mod bench_cmd;
pub mod config;
pub mod edit;
pub mod segmenter;

use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: exit 2.
    #[error("{0}")]
    Validation(String),
    /// The run itself failed: exit 3.
    #[error("{0}")]
    Failure(String),
    /// Benchmark I/O or manifest problems, or nothing to report: exit 1.
    #[error("{0}")]
    Bench(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Failure(_) => 3,
            CliError::Bench(_) => 1,
        }
    }
}

impl From<ale_core::BenchError> for CliError {
    fn from(e: ale_core::BenchError) -> Self {
        CliError::Bench(e.to_string())
    }
}

pub fn report(result: Result<(), CliError>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
