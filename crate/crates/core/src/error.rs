use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CfxError>;

#[derive(Debug, Error)]
pub enum CfxError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("size mismatch in {what}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        what: String,
        expected: u64,
        found: u64,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("unknown class name '{0}'")]
    UnknownClass(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("class '{0}' has no positive examples")]
    DegenerateClass(String),

    #[error("model failure: {0}")]
    Model(String),

    #[error("no important feature reaches the global threshold {threshold}")]
    EmptyRule { threshold: f64 },

    #[error("R-peak alignment unavailable: {0}")]
    AlignmentUnavailable(String),

    #[error("no counterfactual target available: every class is already predicted")]
    NoTarget,

    #[error("target class '{0}' already matches the current prediction")]
    TargetIsCurrent(String),

    #[error("no prototypes stored for class '{0}'")]
    NoPrototypes(String),

    #[error("donor series is not classified as the target")]
    DonorNotTarget,

    #[error("no mask up to keep ratio {max_keep_ratio} reaches the target")]
    SparsifyExhausted { max_keep_ratio: f64 },
}

impl CfxError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CfxError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl ToString) -> Self {
        CfxError::Format {
            what,
            detail: detail.to_string(),
        }
    }

    /// True for errors caused by the caller's inputs rather than a failing
    /// computation or backend.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            CfxError::Model(_) | CfxError::Io { .. } | CfxError::SparsifyExhausted { .. }
        )
    }
}
