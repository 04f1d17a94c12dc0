//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("malformed corpus: {skipped} of {total} lines unreadable in {path}")]
    MalformedCorpus {
        path: PathBuf,
        skipped: usize,
        total: usize,
    },

    #[error("cold fraction must lie in (0,1), got {0}")]
    BadFraction(f64),

    #[error("no cold-ending sequences")]
    NoColdSequences,

    #[error("missing slot: {0}")]
    MissingSlot(String),

    #[error("unscripted prompt: no fixture for key {key}")]
    UnscriptedPrompt { key: String },

    #[error("backend error{}: {message}", if *.retryable { " (retryable)" } else { "" })]
    Backend { message: String, retryable: bool },

    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },

    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedder mismatch: knowledge base built with {stored}, runtime configured for {configured}")]
    EmbedderMismatch { stored: String, configured: String },

    #[error("unsupported schema version {found} (supported: {supported})")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },

    #[error("knowledge base at {path} is incomplete or corrupt: {detail}")]
    CorruptStore { path: PathBuf, detail: String },

    #[error("empty knowledge base")]
    EmptyKnowledgeBase,

    #[error("empty profile for item {item_id}")]
    EmptyProfile { item_id: String },

    #[error("extraction failed for item {item_id}: {detail}")]
    ExtractionFailed { item_id: String, detail: String },

    #[error("unparseable recommendation")]
    UnparseableRecommendation,

    #[error("threshold {0} outside score scale [0,10]")]
    BadThreshold(f64),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("knowledge base locked by another process (lock file {path})")]
    LockHeld { path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Transient failures worth retrying (timeouts, 429, 5xx).
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Backend { retryable, .. } => *retryable,
            Error::HttpStatus { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Process exit code: 0 ok, 1 usage/config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::MissingSlot(_)
            | Error::BadFraction(_)
            | Error::BadThreshold(_) => 1,
            Error::Backend { .. }
            | Error::HttpStatus { .. }
            | Error::RetriesExhausted { .. }
            | Error::UnscriptedPrompt { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
