use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (symmetry violation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    Negative { eigenvalue: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("unsupported qubit count {0} (expected 2 or 3)")]
    UnsupportedQubits(usize),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error(
        "uninformative measurement: Gram operator is singular (smallest eigenvalue {min_eigenvalue:e}); \
         the active projectors do not span the full state space"
    )]
    SingularGram { min_eigenvalue: f64 },

    #[error("projector mask does not match the model (model {expected}, input {found})")]
    MaskMismatch { expected: String, found: String },

    #[error("invalid network specification: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unsupported file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("file is corrupt: {0}")]
    Corrupt(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::UnsupportedQubits(_)
            | Error::UnknownName(_)
            | Error::OutOfRange(_)
            | Error::InvalidNetwork(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Corrupt(_)
            | Error::Empty(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::MaskMismatch { .. }
            | Error::DimensionMismatch(_) => ErrorClass::Data,
            Error::NotSquare { .. }
            | Error::NotHermitian { .. }
            | Error::Negative { .. }
            | Error::NoConvergence { .. }
            | Error::InvalidState(_)
            | Error::SingularGram { .. } => ErrorClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
