use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numerical core.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Two operands of `op` have incompatible shapes.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Data length does not match the product of the shape.
    DataLength { expected: usize, got: usize },
    /// `backward` was called on a node with more than one element.
    NonScalarLoss { shape: Vec<usize> },
    /// A value that must be finite was not.
    NonFinite { context: &'static str },
    /// An argument violated a precondition.
    InvalidArgument { what: &'static str, detail: String },
    /// An operation was given an empty axis or empty set.
    Empty(&'static str),
    /// A named subset was not found.
    UnknownSubset(String),
    /// A dataset with no usable scenes.
    EmptyDataset,
    /// A `key = value` config line could not be used (1-based line).
    Config { line: usize, detail: String },
    /// A checkpoint failed structural checks.
    CorruptCheckpoint(&'static str),
    /// A checkpoint was written by an incompatible format version.
    CheckpointVersion { found: u32, expected: u32 },
    /// A checkpoint belongs to a different configuration.
    ConfigHashMismatch { expected: u64, found: u64 },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            what,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Error::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape volume {expected}")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::InvalidArgument { what, detail } => write!(f, "invalid {what}: {detail}"),
            Error::Empty(what) => write!(f, "empty {what}"),
            Error::UnknownSubset(name) => write!(f, "unknown subset '{name}'"),
            Error::EmptyDataset => write!(f, "dataset contains no scenes"),
            Error::Config { line, detail } => write!(f, "config line {line}: {detail}"),
            Error::CorruptCheckpoint(why) => write!(f, "corrupt checkpoint: {why}"),
            Error::CheckpointVersion { found, expected } => {
                write!(f, "checkpoint format version {found}, expected {expected}")
            }
            Error::ConfigHashMismatch { expected, found } => write!(
                f,
                "checkpoint config hash {found:016x} does not match {expected:016x}"
            ),
        }
    }
}

impl core::error::Error for Error {}
