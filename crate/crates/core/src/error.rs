use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has norm {norm:e}, too small to normalize")]
    ZeroRow { row: usize, norm: f64 },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid contrastive batch: {0}")]
    InvalidBatch(String),

    #[error("view subset is not closed under pairing: view {view} is in the subset but its pair {pair} is not")]
    SubsetNotPairClosed { view: usize, pair: usize },

    #[error("view {view} has no other view with the same label")]
    LonelyLabel { view: usize },

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("invalid augmentation policy: {0}")]
    PolicyInvalid(String),

    #[error("training split has no instances to sample from")]
    EmptyDataset,

    #[error("non-finite loss at step {step} ({loss_kind}): {detail}")]
    NonFiniteLoss {
        step: usize,
        loss_kind: String,
        detail: String,
    },

    #[error("forward cache does not match the model: {0}")]
    CacheMismatch(String),

    #[error("bag has no instances")]
    EmptyBag,

    #[error("MIL training needs both bag classes, got {0}")]
    SingleClassTraining(String),

    #[error("metric needs both classes in the labels")]
    SingleClass,

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("missing features: {0}")]
    MissingFeatures(String),

    #[error("incomplete experiment, missing variant(s): {}", .0.join(", "))]
    IncompleteExperiment(Vec<String>),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration and usage problems exit with 1, everything else with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. }
            | Error::ConfigInvalid(_)
            | Error::PolicyInvalid(_)
            | Error::Usage(_) => 1,
            _ => 2,
        }
    }
}
