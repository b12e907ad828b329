use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    Io { path: PathBuf, source: io::Error },
    /// A text input could not be read; `line` is 1-based.
    Parse {
        source_name: String,
        line: usize,
        detail: String,
    },
    Core(gatraj_core::Error),
    /// A data source was missing, empty or unusable.
    Data(String),
    /// Command-line arguments were inconsistent.
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Parse {
                source_name,
                line,
                detail,
            } => write!(f, "{source_name}:{line}: {detail}"),
            Error::Core(e) => e.fmt(f),
            Error::Data(msg) => write!(f, "data: {msg}"),
            Error::Usage(msg) => write!(f, "usage: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<gatraj_core::Error> for Error {
    fn from(e: gatraj_core::Error) -> Self {
        Error::Core(e)
    }
}
