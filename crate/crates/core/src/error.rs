use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or channel/feature counts disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A layer, transform, schedule or run parameter is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The input is well-formed but the operation is undefined on it
    /// (empty reduction, single-sample batch norm, empty class, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    /// A structured-text file (config, manifest, report) failed to parse.
    #[error("cannot parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}

/// Failures specific to reading a checkpoint file. Each corruption mode is a
/// distinct variant so callers can tell them apart.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {found:?}, expected \"VBN1\"")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("malformed checkpoint header: {0}")]
    Header(String),

    #[error("tensor {name} has shape {found:?} but the embedded config requires {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("payload checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("{0} unexpected trailing bytes after checksum")]
    TrailingData(usize),
}
