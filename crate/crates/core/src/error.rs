use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown predicate `{name}` at {line}:{column}")]
    UnknownPredicate {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("interval bounds reversed: [{a},{b}] requires a <= b")]
    ReversedInterval { a: usize, b: usize },
    #[error("negation at {line}:{column} is not supported: formulas must be in positive normal form (encode a negated predicate as a new predicate -h)")]
    Negation { line: usize, column: usize },
    #[error("formula not in the fragment: subformula `{0}` is not a dictionary atom")]
    NotInFragment(String),
    #[error("formula horizon {horizon} exceeds the basis horizon {k_max}")]
    HorizonExceeded { horizon: usize, k_max: usize },
    #[error("time {t} out of range [{min}, {max}]")]
    TimeOutOfRange { t: usize, min: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("basis kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: String, got: String },
    #[error("empty score list")]
    EmptyScores,
    #[error("empty support set")]
    EmptySupport,
    #[error("decoder support is not contained in the calibrated support")]
    SupportViolation,
    #[error("duplicate interval [{a},{b}]")]
    DuplicateInterval { a: usize, b: usize },
    #[error("duplicate atom `{0}` in dictionary")]
    DuplicateAtom(String),
    #[error("crossed bounds at coordinate {index}: lower {lower} > upper {upper}")]
    CrossedBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("episode {id} too short: length {len} < {required}")]
    EpisodeTooShort { id: u64, len: usize, required: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for filesystem failures, as opposed to invalid input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
