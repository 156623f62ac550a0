use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the matching engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the valid {width}x{height} grid")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("downsampling a {width}x{height} image by {factor} leaves no pixels")]
    EmptyOutput {
        width: usize,
        height: usize,
        factor: usize,
    },
    #[error("image {width}x{height} is smaller than the {required}px descriptor support")]
    ImageTooSmall {
        width: usize,
        height: usize,
        required: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("a feature hierarchy needs at least 2 levels, got {0}")]
    HierarchyTooShallow(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("file truncated: header declares {expected} bytes, {found} present")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("declared dimensions overflow the addressable size")]
    DimOverflow,
    #[error("malformed input at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("exclusion window covers the whole map; no negative available")]
    NoValidNegative,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("search region is smaller than the subvolume")]
    EmptyCandidateSet,
    #[error("no flow seeds survived filtering")]
    NoSeeds,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("evaluation mask selects no pixels")]
    EmptyMask,
    #[error("degenerate transform: {0}")]
    DegenerateTransform(String),
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{path}: {source}")]
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
