use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("no records")]
    NoRecords,
    #[error("empty after filtering")]
    EmptyAfterFiltering,
    #[error("block {0} is empty")]
    EmptyBlock(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{side} id {id} out of range (n = {n})")]
    IdOutOfRange { side: &'static str, id: u32, n: usize },
    #[error("isolated node: {side} {id} has no neighbors")]
    IsolatedNode { side: &'static str, id: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("divergence: non-finite {0}")]
    Divergence(String),
    #[error("k-means needs at least {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("user {0} has interacted with every item")]
    NoNegatives(u32),
    #[error("k = {k} exceeds the {available} unmasked items of user {user}")]
    KTooLarge { k: usize, available: usize, user: u32 },
    #[error("snapshot/model mismatch: {0}")]
    SnapshotMismatch(String),
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// True for errors raised by non-finite values during optimization.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }

    /// True for errors that originate in input data rather than training.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::NoRecords
                | Error::EmptyAfterFiltering
                | Error::EmptyBlock(_)
                | Error::Format { .. }
        )
    }
}
