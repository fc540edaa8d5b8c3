use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("layer {layer}: rank {rank} exceeds min dimension {max}")]
    RankTooLarge {
        layer: String,
        rank: usize,
        max: usize,
    },

    #[error("adapter {layer}: {reason}")]
    AdapterShape { layer: String, reason: String },

    #[error("base weight is marked trainable; frozen weights must not require gradients")]
    BaseTrainable,

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("checkpoint {path}: {reason} at byte offset {offset}")]
    Checkpoint {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    #[error("task {0:?} already exists in the registry")]
    DuplicateTask(String),

    #[error("task {0:?} not found in the registry")]
    UnknownTask(String),

    #[error("registry at {0} has no tasks")]
    EmptyRegistry(PathBuf),

    #[error("registry at {0} is locked by another writer")]
    Locked(PathBuf),

    #[error("manifest {path}, line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure at iteration {iteration} (loss_critic={loss_critic}, loss_gen={loss_gen}): {detail}")]
    Numerical {
        iteration: usize,
        loss_critic: f64,
        loss_gen: f64,
        detail: String,
    },

    #[error("eigendecomposition did not converge")]
    EigenNonConvergence,

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite arithmetic.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. }
                | Error::Tensor(TensorError::NonFinite { .. })
                | Error::EigenNonConvergence
        )
    }
}
