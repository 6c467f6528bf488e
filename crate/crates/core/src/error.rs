use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    Dim {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("interaction needs at least two fields, got {0}")]
    TooFewFields(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error("schema mismatch: snapshot schema {snapshot} vs data schema {data}")]
    SchemaMismatch { snapshot: String, data: String },

    #[error("non-finite value in parameter group `{group}`")]
    NonFinite { group: String },

    #[error("AUC undefined: need at least one positive and one negative (got {positives} positive, {negatives} negative)")]
    AucUndefined { positives: usize, negatives: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dim {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code: 2 for configuration or usage problems (including
    /// schema mismatches), 3 for data problems, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dim { .. }
            | Error::TooFewFields(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Snapshot(_)
            | Error::SchemaMismatch { .. } => 2,
            Error::Record { .. } | Error::Data(_) | Error::Io { .. } | Error::AucUndefined { .. } => 3,
            Error::NonFinite { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
