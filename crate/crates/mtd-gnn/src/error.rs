use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by tensor, graph, model and dataset operations.
#[derive(Error, Debug)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("segment softmax: segment {segment} is empty; mask such rows out before the call")]
    EmptySegment { segment: usize },
    #[error("segment softmax: index {index} appears in more than one segment")]
    OverlappingSegments { index: usize },
    #[error("{op}: index {index} out of bounds for {len} rows")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward: tape already consumed by a previous backward call")]
    TapeConsumed,
    #[error("{op}: tensor does not belong to the active tape")]
    DetachedTensor { op: &'static str },
    #[error("adam: missing gradient for parameter `{name}`")]
    MissingGradient { name: String },
    #[error("lr schedule: epoch must be >= 1, got {epoch}")]
    InvalidEpoch { epoch: i64 },
    #[error("hungarian: cost matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("build_graph: at least one frame is required")]
    EmptyGraph,
    #[error("feature dim mismatch: expected {expected}, got {got}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("loss: predictions and targets cover different pair sets for relation `{relation}`")]
    PairSetMismatch { relation: String },
    #[error("metrics: empty pair set")]
    EmptyPairSet,
    #[error("relation `{name}`: {reason}")]
    InvalidRelation { name: String, reason: String },
    #[error("baseline: frame {frame} has {got} nodes, exceeding max_nodes = {max}")]
    TooManyNodes {
        frame: usize,
        got: usize,
        max: usize,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },
    #[error("verification check `{check}` failed: {detail}")]
    Verification { check: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Usage/config errors map to exit code 2, everything else to 1.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidRelation { .. } | Error::FeatureDimMismatch { .. }
        )
    }
}
