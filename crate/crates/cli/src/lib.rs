//! sscore — IO, file formats and the command-line harness for the
//! `sscore-core` scoring pipeline.
//!
//! Formats: MetaImage-style volume headers with raw `float32le` payloads,
//! PGM mask/slice exports, text+binary network checkpoints, and the CSV
//! schemas for datasets, level annotations, predictions and reports.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod pgm;
pub mod raters;
pub mod reports;
pub mod volfile;

use std::fmt;

/// CLI error categories; each maps onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Malformed or missing data files (exit 3).
    #[error("{0}")]
    Data(String),
    /// Training diverged (exit 4).
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<sscore_core::Error> for CliError {
    fn from(e: sscore_core::Error) -> Self {
        use sscore_core::Error as E;
        match &e {
            E::InvalidArgument(_) | E::ShapeMismatch(_) => CliError::Usage(e.to_string()),
            E::Divergence { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Format error helper that names the offending field.
pub(crate) fn field_err(file: &dyn fmt::Display, field: &str, detail: impl fmt::Display) -> CliError {
    CliError::Data(format!("{file}: field {field}: {detail}"))
}
