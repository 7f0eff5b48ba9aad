use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the refinement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic bytes {found:?}, expected \"SEGT\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported tensor version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported tensor dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("unsupported tensor rank {0} (expected 1 to 3)")]
    UnsupportedRank(u8),

    #[error("truncated tensor: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes after tensor payload: {0}")]
    TrailingBytes(usize),

    #[error("tensor dims {0:?} overflow the addressable size")]
    DimOverflow(Vec<u32>),

    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),

    #[error("invalid label {label} at site {site} (label set size {size})")]
    InvalidLabel {
        site: usize,
        label: u32,
        size: usize,
    },

    #[error("invalid probability map: {0}")]
    InvalidProbabilities(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid confusion model: {0}")]
    InvalidConfusion(String),

    #[error("class {class} out of range for {size} labels")]
    ClassOutOfRange { class: usize, size: usize },

    #[error("no non-void pixels")]
    NoValidPixels,

    #[error("empty sample set")]
    EmptySamples,

    #[error("empty label set for masking")]
    EmptyLabelSet,

    #[error("no classes with nonzero union")]
    NoScorableClasses,

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("no {0} records")]
    EmptySplit(&'static str),

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure: {0}")]
    Solver(String),

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
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
