use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector: norm {norm:e} is below 1e-12 (dead activation pixel)")]
    ZeroVector { norm: f64 },

    #[error("degenerate hue plane: {0}")]
    DegeneratePlane(String),

    #[error("degenerate spectrum: second eigenvalue {second:e} < 1e-12 x first {first:e}")]
    DegenerateSpectrum { first: f64, second: f64 },

    #[error("memory store is frozen; no further inserts allowed")]
    FrozenStore,

    #[error("memory store is empty")]
    EmptyStore,

    #[error("NotFrozen: memory store must be frozen before querying")]
    NotFrozen,

    #[error("query vector norm {norm} is not 1 within 1e-6")]
    BadQueryNorm { norm: f64 },

    #[error("query image has no non-zero pixel")]
    EmptyQuery,

    #[error("no angular data: all records sit at the image center")]
    NoAngularData,

    #[error("class count {0} is below 2")]
    BadClassCount(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stale cache: computed at parameter version {cache}, network is at {net}")]
    StaleCache { cache: u64, net: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("bad magic at byte offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported version {found} at byte offset {offset}")]
    BadVersion { offset: u64, found: u32 },

    #[error("truncated input at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: u64 },

    #[error("corrupt data at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("manifest {path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
