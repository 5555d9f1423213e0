use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GestaltError> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
///
/// [`GestaltError::category`] groups variants into the coarse classes the
/// command line maps onto exit codes.
#[derive(Debug, Error)]
pub enum GestaltError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("unknown label `{label}` for sample `{id}`")]
    UnknownLabel { id: String, label: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch norm in train mode needs at least 2 samples per batch, got {0}")]
    DegenerateBatch(usize),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("need at least {needed} classes, got {got}")]
    InsufficientClasses { needed: usize, got: usize },

    #[error("model phase error: {0}")]
    Phase(String),

    #[error("crop region {crop} does not match model region {model}")]
    RegionMismatch { crop: String, model: String },

    #[error("label lists differ between score vectors")]
    LabelMismatch,

    #[error("cannot aggregate an empty ensemble")]
    EmptyEnsemble,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("cohort `{0}` is empty")]
    EmptyCohort(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: image error: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Coarse error classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Internal,
}

impl GestaltError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GestaltError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use GestaltError::*;
        match self {
            InvalidArgument(_) | Config(_) => ErrorCategory::Usage,
            Invariant(_) | ShapeMismatch(_) => ErrorCategory::Internal,
            _ => ErrorCategory::Data,
        }
    }
}
