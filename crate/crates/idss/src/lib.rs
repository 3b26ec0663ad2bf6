//! File formats, an independent oracle, the scenario harness and the command
//! line around [`idss_core`].

pub mod alloc_counter;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod datagen;
pub mod harness;
pub mod oracle;
pub mod schema;

use std::path::{Path, PathBuf};

pub use idss_core as core;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv_io::CsvError },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.into(), message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ConfigError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, e: impl std::fmt::Display) -> Self {
        ConfigError::Parse { path: path.to_path_buf(), message: e.to_string().trim_end().to_string() }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))
}
