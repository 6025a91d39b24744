use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown scenario `{0}` (expected pp_3a or pp_6a)")]
    UnknownScenario(String),

    #[error("episode already finished at timestep {0}")]
    EpisodeDone(usize),

    #[error("KL divergence undefined: {0}")]
    KlUndefined(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Checkpoint load failures, each with a stable code.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("[E-CKPT-VERSION] unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("[E-CKPT-BLOB-LENGTH] blob holds {found} bytes, manifest requires {expected}")]
    BlobLength { found: usize, expected: usize },

    #[error(
        "[E-CKPT-TENSOR-COUNT] manifest lists {found} tensors, architecture requires {expected}"
    )]
    TensorCount { found: usize, expected: usize },

    #[error("[E-CKPT-CHECKSUM] blob checksum {found:08x} does not match manifest {expected:08x}")]
    Checksum { found: u32, expected: u32 },

    #[error("[E-CKPT-INTEGRITY] {0}")]
    Integrity(String),

    #[error("[E-CKPT-MANIFEST] {0}")]
    Manifest(String),
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::Version { .. } => "E-CKPT-VERSION",
            CheckpointError::BlobLength { .. } => "E-CKPT-BLOB-LENGTH",
            CheckpointError::TensorCount { .. } => "E-CKPT-TENSOR-COUNT",
            CheckpointError::Checksum { .. } => "E-CKPT-CHECKSUM",
            CheckpointError::Integrity(_) => "E-CKPT-INTEGRITY",
            CheckpointError::Manifest(_) => "E-CKPT-MANIFEST",
        }
    }
}
