use thiserror::Error;

/// Errors surfaced by the compute core, network modules, and data pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph; rebuild the graph before calling again")]
    BackwardTwice,

    #[error("parameter `{0}` has no gradient; run backward before the optimizer step")]
    MissingGrad(String),

    #[error("non-finite value in {context}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        context: String,
        step: Option<usize>,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config/checkpoint mismatch:\n{0}")]
    CheckpointMismatch(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("average precision is undefined with zero ground-truth boxes")]
    ZeroGroundTruth,

    #[error("box has nonpositive extent: width={width}, height={height}")]
    DegenerateBox { width: f64, height: f64 },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
