use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator is numerically singular: pivot {index} has magnitude {pivot:e}")]
    SingularOperator { index: usize, pivot: f64 },

    #[error("inverse image {index} has zero norm")]
    DegenerateWeight { index: usize },

    #[error("Gram diagonal entry {index} is not positive")]
    DegenerateAtom { index: usize },

    #[error("truncation level {requested} exceeds the numerical rank; largest usable level is {usable}")]
    TruncationLimit { requested: usize, usable: usize },

    #[error("least-squares design is rank deficient: effective rank {rank} of {requested}")]
    RankDeficient { rank: usize, requested: usize },

    #[error("oracle tuning requires the true signal")]
    OracleUnavailable,

    #[error("exhaustive enumeration of {supports} supports exceeds the limit {limit}; use probe mode")]
    Capacity { supports: u128, limit: u128 },

    #[error("{fails} of {total} replications failed, above the abort threshold")]
    TooManyFailures { fails: usize, total: usize },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
