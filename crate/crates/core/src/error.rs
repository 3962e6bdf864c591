use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resolution mismatch: {0} ps vs {1} ps")]
    ResolutionMismatch(u64, u64),
    #[error("bad magic bytes: expected \"PTAG\"")]
    BadMagic,
    #[error("unsupported stream format version {0}")]
    UnsupportedVersion(u16),
    #[error("reserved header bytes are not zero")]
    NonZeroReserved,
    #[error("truncated header or record at byte offset {0}")]
    Truncated(usize),
    #[error("unsorted payload at record {0}")]
    Unsorted(usize),
    #[error("tag {index} at t = {t} ps is beyond stream duration {duration} ps")]
    TagBeyondDuration { index: usize, t: u64, duration: u64 },
    #[error("tag {index} has channel {channel}, stream declares {count} channels")]
    UnknownChannel {
        index: usize,
        channel: u8,
        count: u8,
    },
    #[error("tag {index} at t = {t} ps is not a multiple of the {resolution} ps resolution")]
    OffGrid {
        index: usize,
        t: u64,
        resolution: u64,
    },
    #[error("timestamp overflow")]
    TimestampOverflow,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("dt = {dt} ps is too coarse; the fastest time constant needs dt <= {max} ps")]
    DtTooCoarse { dt: u64, max: u64 },
    #[error("rate x dt = {0} exceeds the per-bin count budget")]
    CountBudget(f64),
    #[error("model does not define a {0} correlation")]
    UnsupportedCorrelator(&'static str),
    #[error("correlogram window too narrow: {0}")]
    WindowTooNarrow(String),
    #[error("correlogram specs differ")]
    SpecMismatch,
    #[error("malformed CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("invalid scenario configuration: {0}")]
    Config(String),
    #[error("unknown builtin scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
