use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown topology kind `{0}`")]
    UnknownTopology(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("channel column for subcarrier {subcarrier} is zero")]
    ZeroChannel { subcarrier: usize },

    #[error("channel matrix is rank deficient on subcarrier {subcarrier}")]
    RankDeficient { subcarrier: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u8, found: u8 },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("dimension {0} does not fit in 16 bits")]
    DimensionOverflow(usize),

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("invalid sample id {0:?}")]
    InvalidSampleId(String),

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("sample {0} has no position label")]
    Unlabelled(String),

    #[error("capture rejected (NAK) for payload `{0}`")]
    Nak(String),

    #[error("timed out waiting for {0}")]
    Timeout(String),

    #[error("positioner error at waypoint {waypoint}: {reply}")]
    Positioner { waypoint: usize, reply: String },

    #[error("capture failed at waypoint {waypoint}: {source}")]
    Capture {
        waypoint: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
