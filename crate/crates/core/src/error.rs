use thiserror::Error;

/// Errors produced across the crate.
///
/// The variants follow the error classes callers need to distinguish: bad
/// caller input, an object in the wrong state, an unreadable file, or a
/// broken calling contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid state: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("gradient check harness: {0}")]
    Harness(String),
    #[error("encoding entry {id} failed: {source}")]
    Entry {
        id: u64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors caused by caller-supplied input rather than by state
    /// or on-disk data.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Input(_) | Error::Parse { .. } | Error::Contract(_) | Error::Harness(_) => true,
            Error::Entry { source, .. } => source.is_input_error(),
            Error::State(_) | Error::Format(_) | Error::Io(_) => false,
        }
    }
}
