use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    RowWidth {
        path: PathBuf,
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("{0}: no samples")]
    EmptyData(PathBuf),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("input is not persistently exciting of order {order}: rank {achieved}, required {required}")]
    Persistency {
        order: usize,
        achieved: usize,
        required: usize,
    },

    #[error("invalid controller specification: {0}")]
    InvalidSpec(String),

    #[error("equality constraints are linearly dependent (rank {rank} of {rows})")]
    RankDeficient { rank: usize, rows: usize },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("active-set solver hit the iteration limit ({0})")]
    IterationLimit(usize),

    #[error("weight matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not Schur stable (spectral radius {0:.6})")]
    Unstable(f64),

    #[error("parameter vector lies in no region of the explicit law")]
    NoRegion,

    #[error("explicit law is empty: the problem is infeasible for every parameter")]
    EmptyLaw,

    #[error("law file checksum mismatch: expected {expected}, computed {computed}")]
    Fingerprint { expected: String, computed: String },

    #[error("unsupported law file version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown system '{0}'")]
    UnknownSystem(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
