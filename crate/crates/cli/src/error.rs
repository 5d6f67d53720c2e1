use std::io;
use std::path::{Path, PathBuf};

use msf_core::io::FormatError;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_MISMATCH: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    /// Well-formed files whose content the pipeline rejects.
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } | Self::Input(_) => EXIT_CONFIG,
            Self::Io { .. } | Self::Format { .. } => EXIT_IO,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, e: &serde_json::Error) -> Self {
        Self::Config {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }

    pub fn input(e: impl std::fmt::Display) -> Self {
        Self::Input(e.to_string())
    }
}
