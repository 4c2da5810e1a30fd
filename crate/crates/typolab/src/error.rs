// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Process exit status for a finished command.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SKIP_THRESHOLD: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("no target candidates found in {corpus} (min word length {min_len})")]
    NoCandidates { corpus: PathBuf, min_len: usize },

    #[error("{skipped} of {total} samples were skipped, above the {limit} limit")]
    SkipThreshold {
        skipped: usize,
        total: usize,
        limit: &'static str,
    },

    #[error("no SR = 0 baseline for {} key(s): {}", .0.len(), .0.join(", "))]
    BaselineMissing(Vec<String>),

    #[error("missing input files: {}", .0.join(", "))]
    MissingInputs(Vec<String>),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] typolab_core::Error),

    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Core(typolab_core::Error::Config(_)) => EXIT_CONFIG,
            Self::SkipThreshold { .. } => EXIT_SKIP_THRESHOLD,
            _ => EXIT_DATA,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Self::Csv {
            path: path.into(),
            source,
        }
    }
}
