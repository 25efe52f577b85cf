//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: u64,
        field: String,
        message: String,
    },

    #[error("duplicate stream id `{0}`")]
    DuplicateStreamId(String),

    #[error("stream `{stream_id}` (line {line}) ends at or before its start")]
    EndBeforeStart { stream_id: String, line: u64 },

    #[error("strict mode violation: {0}")]
    StrictModeViolation(String),

    #[error("panel cache version mismatch (expected `{expected}`, found `{found}`)")]
    CacheVersion { expected: String, found: String },

    #[error("no observations for stream `{stream_id}` in [{from}, {to})")]
    EmptyWindow {
        stream_id: String,
        from: String,
        to: String,
    },

    #[error("stream `{0}` has no observations")]
    EmptyStream(String),

    #[error("unknown stream id `{0}`")]
    UnknownStream(String),

    #[error("unknown channel id `{0}`")]
    UnknownChannel(String),

    #[error("length mismatch: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty input")]
    EmptyInput,

    #[error("channel `{channel}` has no {missing} streams")]
    InsufficientClasses { channel: String, missing: String },

    #[error("channel `{0}` has no eligible streams for retention")]
    NoEligibleStreams(String),

    #[error("missing loyalty component {component} for channel `{channel}`")]
    MissingComponent { channel: String, component: char },

    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),

    #[error("no defined overlap cells to score")]
    NoDefinedCells,

    #[error("missing result: {0}")]
    MissingResult(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
