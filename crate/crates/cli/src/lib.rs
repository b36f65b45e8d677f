//! Experiment driver: configuration, orchestration of the cell, macro and
//! fine stages, and report files.

pub mod config;
pub mod output;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run_command, Command, Outcome};

use twoscale_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("check failed: {}", .0.join("; "))]
    Check(Vec<String>),
}

impl CliError {
    /// 0 success, 1 i/o, 2 configuration, 3 solver non-convergence,
    /// 4 violated property.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Check(_) => 4,
            CliError::Core(e) => core_code(e),
        }
    }
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::InvalidGrid(_) | CoreError::Config(_) | CoreError::InvalidModel(_) | CoreError::DofCap { .. } => 2,
        CoreError::NonConvergence { .. } | CoreError::PicardNonConvergence { .. } | CoreError::NonFinite(_) => 3,
        CoreError::Incompatible { .. } | CoreError::VoigtReuss(_) => 4,
        CoreError::Sample { source, .. } => core_code(source),
        _ => 1,
    }
}
