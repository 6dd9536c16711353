//! Error types shared across the crate.
//!
//! Errors split into two broad classes so binaries can map them to exit
//! codes: [`ConfigError`] and [`ModelError`] mean the caller asked for
//! something invalid, everything else is a runtime failure.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Invalid configuration value, rejected before any work starts.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f32),
    #[error("beta must be in (0, 1], got {0}")]
    BetaOutOfRange(f32),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("1/t learning-rate schedule needs t >= 1")]
    ZeroRound,
    #[error("a network needs at least two layer widths")]
    TooFewLayers,
    #[error("layer widths must be positive")]
    ZeroWidth,
    #[error("seed must be 64 hex characters, got {0:?}")]
    BadSeedHex(String),
    #[error("client count must be at least 1")]
    NoClients,
    #[error("client {client} has an empty shard")]
    EmptyShard { client: u32 },
    #[error("cannot partition {n} samples across {k} clients")]
    TooManyClients { n: usize, k: u32 },
    #[error("{0}")]
    Invalid(String),
    #[error("config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
}

/// Shape or domain violation in a model-level call.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss list is empty")]
    EmptyLosses,
}

/// Dataset ingestion failure. Every variant names the file and the byte
/// offset where parsing stopped.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic {found:#010x} at byte 0 (expected {expected:#010x})")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: file ends at byte {offset}, needed {needed} more")]
    Truncated {
        path: PathBuf,
        offset: u64,
        needed: u64,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} out of range at item {index}")]
    LabelRange {
        path: PathBuf,
        label: u8,
        index: usize,
    },
    #[error("{path}: image dimensions {rows}x{cols} overflow")]
    BadDimensions { path: PathBuf, rows: u32, cols: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Wire protocol violation: malformed frames or out-of-order messages.
#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("unknown message tag {tag} at byte {offset}")]
    UnknownTag { tag: u8, offset: u64 },
    #[error("frame payload of {len} bytes exceeds the {max} byte limit")]
    Oversize { len: u64, max: u64 },
    #[error("payload length {len} inconsistent with content at byte {offset}")]
    Malformed { len: usize, offset: u64 },
    #[error("report batch indices not strictly increasing at entry {entry}")]
    UnorderedBatches { entry: usize },
    #[error("unexpected {got} while waiting for {want}")]
    Unexpected {
        got: &'static str,
        want: &'static str,
    },
    #[error("report for round {got} during round {want}")]
    StaleRound { got: u64, want: u64 },
    #[error("duplicate client id {0}")]
    DuplicateClient(u32),
    #[error("client id {client} out of range (expected 0..{clients})")]
    ClientRange { client: u32, clients: u32 },
    #[error("batch index {batch} out of range for client {client} ({limit} batches)")]
    BatchRange { client: u32, batch: u32, limit: u32 },
    #[error("parameter count {got} does not match the model ({want})")]
    ParamLen { got: usize, want: usize },
    #[error("client {0} timed out")]
    Timeout(u32),
    #[error("connection closed")]
    Closed,
    #[error("transport: {0}")]
    Io(#[from] io::Error),
}

/// Top-level error for orchestration entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    /// True when the error reflects caller input rather than a failure of
    /// the run itself. Binaries use this to pick the exit code.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Model(_))
    }
}
