use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::ConfigError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_HALT: i32 = 3;
pub const EXIT_CHECK: i32 = 4;
/// I/O trouble and anything else unexpected
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", render_config(.0))]
    Config(Vec<ConfigError>),
    #[error("{0}")]
    Usage(String),
    #[error("integrator halted: {0}")]
    Halt(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] pcflow::PcfError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn render_config(errs: &[ConfigError]) -> String {
    let lines: Vec<String> = errs.iter().map(|e| format!("config error: {e}")).collect();
    lines.join("\n")
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Halt(_) => EXIT_HALT,
            CliError::Core(pcflow::PcfError::Halt { .. } | pcflow::PcfError::NotAdmissible(_)) => EXIT_HALT,
            CliError::Check(_) => EXIT_CHECK,
            _ => EXIT_OTHER,
        }
    }
}
