//! File formats, dataset ingestion, synthetic benchmark generation, and the
//! command-line harness around `zigzag-core`.
//!
//! Per-image records travel as JSON lines (streamable, diff-friendly),
//! human-facing tables as CSV, annotations as VOC-style XML. All writers are
//! deterministic: stable field order, floats rounded to nine significant
//! digits, and every run emits a manifest sufficient to replay it
//! bit-identically.

pub mod cli;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod voc;

use std::path::PathBuf;

use thiserror::Error;

/// Harness-level error. `exit_code` separates input/validation failures (1)
/// from runtime failures (2) for the CLI contract.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    InvalidInput { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Read { .. }
            | HarnessError::MalformedRecord { .. }
            | HarnessError::InvalidInput { .. }
            | HarnessError::InvalidArgument(_) => 1,
            HarnessError::Write { .. } | HarnessError::Runtime(_) => 2,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        HarnessError::Runtime(e.to_string())
    }

    pub fn invalid(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        HarnessError::InvalidInput { path: path.into(), message: message.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
