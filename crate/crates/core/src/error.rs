use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("log of non-positive value {value} at index {index}")]
    LogDomain { index: usize, value: f64 },

    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },

    #[error("backward requires a training-mode graph")]
    InferenceBackward,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("network layer {index}: {detail}")]
    Layer { index: usize, detail: String },

    #[error("label {label} at row {row} out of range for {classes} classes")]
    Label { row: usize, label: usize, classes: usize },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("no class is eligible for AUC (each needs a positive and a negative sample)")]
    NoEligibleClass,

    #[error("class {class} has {count} samples, fewer than {k} folds")]
    ClassTooSmall { class: usize, count: usize, k: usize },

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("bad magic in {path}: expected DSR1")]
    BadMagic { path: PathBuf },

    #[error("truncated {section} in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        section: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite loss in fold {fold}, epoch {epoch}, batch {batch}")]
    NonFiniteLoss { fold: usize, epoch: usize, batch: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::LogDomain { .. } => "log_domain",
            Error::Axis { .. } => "axis",
            Error::InferenceBackward => "inference_backward",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::Config(_) => "config",
            Error::Layer { .. } => "layer",
            Error::Label { .. } => "label",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::EmptyBatch => "empty_batch",
            Error::NoEligibleClass => "no_eligible_class",
            Error::ClassTooSmall { .. } => "class_too_small",
            Error::Parse { .. } => "parse",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
