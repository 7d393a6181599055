use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sentence {sentence}: {message}")]
    Evaluation { sentence: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    /// A request that does not fit the current state, such as labeling a
    /// sentence that is not the outstanding query.
    #[error("conflict: {0}")]
    Conflict(String),

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("unsupported {kind} version {found} (this build reads up to {supported})")]
    Version {
        kind: &'static str,
        found: u32,
        supported: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
