// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A corpus entry could not be parsed.
    #[error("corpus entry `{sample_id}`: {reason}")]
    CorpusParse { sample_id: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// No differing permutation of the chosen substring exists.
    #[error("degenerate word `{word}`: {reason}")]
    DegenerateWord { word: String, reason: String },

    #[error("text has no context words to mask")]
    NoContext,

    #[error("character {ch:?} at offset {offset} is not in the tokenizer alphabet")]
    UnknownCharacter { ch: char, offset: usize },

    /// A character range does not line up with token boundaries.
    #[error("character range {start}..{end} does not align with token boundaries")]
    SpanMismatch { start: usize, end: usize },

    #[error("validation failed for `{field}`: {detail}")]
    Validation { field: String, detail: String },

    #[error("{file}: checksum mismatch (manifest {expected}, file {actual})")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("{file}: shape mismatch at byte {offset}: {detail}")]
    ShapeMismatch { file: String, offset: u64, detail: String },

    #[error("{file}: bad header: {detail}")]
    BadHeader { file: String, detail: String },

    #[error("{file}: non-finite value in `{field}` at index {index} (byte {offset})")]
    NonFinite {
        file: String,
        field: &'static str,
        index: usize,
        offset: u64,
    },

    #[error("zero-norm vector in cosine similarity")]
    ZeroVector,

    /// The original-side dump of a SemRecScore comparison must track exactly one token.
    #[error("original dump spans {span_len} tokens, expected 1")]
    InvalidOriginal { span_len: usize },

    #[error("KL divergence is infinite: q[{index}] = 0 while p[{index}] > 0")]
    InfiniteDivergence { index: usize },

    #[error("no SR pairs realize delta_sr = {delta_sr}")]
    EmptyPairSet { delta_sr: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.into(),
            source,
        }
    }

    /// Short machine-friendly name of the variant, used in skip logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::CorpusParse { .. } => "CorpusParse",
            Self::Config(_) => "Config",
            Self::Precondition(_) => "Precondition",
            Self::DegenerateWord { .. } => "DegenerateWord",
            Self::NoContext => "NoContext",
            Self::UnknownCharacter { .. } => "UnknownCharacter",
            Self::SpanMismatch { .. } => "SpanMismatch",
            Self::Validation { .. } => "ValidationError",
            Self::ChecksumMismatch { .. } => "ChecksumMismatch",
            Self::ShapeMismatch { .. } => "ShapeMismatch",
            Self::BadHeader { .. } => "BadHeader",
            Self::NonFinite { .. } => "NonFinite",
            Self::ZeroVector => "ZeroVector",
            Self::InvalidOriginal { .. } => "InvalidOriginal",
            Self::InfiniteDivergence { .. } => "InfiniteDivergence",
            Self::EmptyPairSet { .. } => "EmptyPairSet",
            Self::EmptyInput(_) => "EmptyInput",
            Self::Io { .. } => "Io",
            Self::Json { .. } => "Json",
        }
    }
}
