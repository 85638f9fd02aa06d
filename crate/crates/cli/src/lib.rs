//! Command-line workflow and review service for `dwiqc`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

pub mod args;
pub mod commands;
pub mod server;

use dwiqc::QcError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(QcError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<QcError> for CliError {
    fn from(e: QcError) -> Self {
        match e {
            QcError::Config(_) | QcError::Labels(_) | QcError::ViewMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(QcError::Io(e))
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: args::Cli) -> CliResult {
    use args::Command::*;
    match cli.command {
        Phantoms(a) => commands::phantoms(a),
        MakeBackbone(a) => commands::make_backbone(a),
        Simulate(a) => commands::simulate(a),
        Train(a) => commands::train(a),
        Qc(a) => commands::qc(a),
        Evaluate(a) => commands::evaluate(a),
        Serve(a) => server::serve(a),
    }
}
