// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the toolkit.
//!
//! Each variant carries a stable machine-readable code (see [`Error::code`])
//! so that the command-line driver and external tooling can react to failure
//! classes without parsing messages.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // -- tensorio -----------------------------------------------------------
    #[error("rejected value in tensor `{name}`: {reason}")]
    RejectedValue { name: String, reason: String },

    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("malformed archive: {0}")]
    Format(String),

    #[error("archive truncated: {0}")]
    Truncation(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    // -- numerics -----------------------------------------------------------
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid sparsity {value}: {reason}")]
    InvalidSparsity { value: f64, reason: String },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("sparsity profiles do not match: {0}")]
    ProfileMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    Vocab { token: u32, vocab: u32 },

    // -- probes -------------------------------------------------------------
    #[error("training data contains a single class")]
    SingleClass,

    #[error("class means coincide; no direction can be formed")]
    DegenerateDirection,

    #[error("need at least {needed} contrast pairs, got {got}")]
    InsufficientPairs { needed: usize, got: usize },

    #[error("training data lacks both polarities")]
    InsufficientPolarity,

    #[error("layer {layer} not present (dataset has {available} layers)")]
    Layer { layer: usize, available: usize },

    // -- corpus -------------------------------------------------------------
    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate statement id `{id}` with polarity {polarity}")]
    DuplicateStatement { id: String, polarity: String },

    #[error("no negation template applies: {0}")]
    Template(String),

    #[error("request too small: {0}")]
    TooSmall(String),

    #[error("calibration source exhausted: {0}")]
    SourceExhausted(String),

    #[error("item `{id}` failed: {reason}")]
    ItemFailed { id: String, reason: String },

    // -- plumbing -----------------------------------------------------------
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable, machine-readable identifier for the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::RejectedValue { .. } => "rejected_value",
            Error::DuplicateName(_) => "duplicate_name",
            Error::Format(_) => "format_error",
            Error::Truncation(_) => "truncation_error",
            Error::Manifest(_) => "manifest_error",
            Error::EmptyInput(_) => "empty_input",
            Error::Shape(_) => "shape_error",
            Error::InvalidSparsity { .. } => "invalid_sparsity",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::ProfileMismatch(_) => "profile_mismatch",
            Error::Config(_) => "config_error",
            Error::Vocab { .. } => "vocab_error",
            Error::SingleClass => "single_class",
            Error::DegenerateDirection => "degenerate_direction",
            Error::InsufficientPairs { .. } => "insufficient_pairs",
            Error::InsufficientPolarity => "insufficient_polarity",
            Error::Layer { .. } => "layer_error",
            Error::Schema(_) => "schema_error",
            Error::DuplicateStatement { .. } => "duplicate_statement",
            Error::Template(_) => "template_error",
            Error::TooSmall(_) => "too_small",
            Error::SourceExhausted(_) => "source_exhausted",
            Error::ItemFailed { .. } => "item_failed",
            Error::Io { .. } => "io_error",
            Error::Json(_) => "json_error",
            Error::Csv(_) => "csv_error",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
