use std::path::PathBuf;

use rfloop_core::data::DataError;
use rfloop_core::ModelError;

/// Failure to read or write one of the file formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },
    #[error("unsupported {what} version {found} (this build reads version {supported})")]
    Version {
        what: &'static str,
        found: u32,
        supported: u32,
    },
    #[error("truncated {what}: need {needed} bytes at offset {offset}, only {available} left")]
    Truncated {
        what: String,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("payload length mismatch in {what}: shape {shape:?} x {elem_bytes} bytes = {expected}, found {actual}")]
    PayloadLength {
        what: String,
        shape: Vec<u32>,
        elem_bytes: usize,
        expected: u64,
        actual: u64,
    },
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("blob was written for manifest {blob}, but this manifest hashes to {manifest}")]
    HashMismatch { blob: String, manifest: String },
    #[error("{0}")]
    Invalid(String),
    #[error("BRAM images hold fixed-point words; these weights are float")]
    FloatWeights,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}
