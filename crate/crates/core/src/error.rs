use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in the track-counting workflow.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file was readable but its contents were not what we expect
    /// (bad header, unsupported bit depth, broken JSON, ...).
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    /// A parameter or input violated an operation's contract.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("too few records: need at least {required}, got {found}")]
    TooFewRecords { required: usize, found: usize },

    #[error("degenerate {0}: all values are equal")]
    Degenerate(&'static str),

    #[error("unknown frame '{0}'")]
    UnknownFrame(String),

    #[error("frame '{0}' has no annotation")]
    MissingAnnotation(String),

    #[error("config hash mismatch for frame '{frame_id}': annotated with {found}, expected {expected}")]
    ConfigMismatch {
        frame_id: String,
        expected: String,
        found: String,
    },

    #[error("no trained model for category '{0}'")]
    NoModel(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the filesystem or by unreadable files,
    /// as opposed to contract violations.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}
