use crate::types::PartitionId;
use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two operands disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value object failed its construction invariants.
    #[error("invalid construction: {0}")]
    Construction(String),

    /// An estimator was asked for a statistic it cannot produce yet.
    #[error("insufficient samples: need at least {needed}, have {got}")]
    InsufficientSamples { needed: u64, got: u64 },

    /// A label index outside `0..L`.
    #[error("label {label} out of range for {labels} labels")]
    LabelOutOfRange { label: usize, labels: usize },

    /// Closed-form loss is undefined: a partition with positive mass and
    /// uncertainty received no samples.
    #[error("loss undefined: partition {0} has positive mass and uncertainty but zero samples")]
    UndefinedLoss(PartitionId),

    /// Fusion was attempted with an unsampled positive-mass partition.
    #[error("incomplete estimate: partition {0} has positive mass but no samples")]
    IncompleteEstimate(PartitionId),

    /// Every partition has zero uncertainty; any allocation is optimal.
    #[error("degenerate scenario: {0}")]
    Degenerate(String),

    /// A run or experiment configuration violates a precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A replayed prediction was requested for an unknown item.
    #[error("no recorded prediction for item {0:?}")]
    MissingItem(String),

    /// The remote endpoint answered but violated the wire contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The remote endpoint could not be reached within the retry budget.
    #[error("query failed: {0}")]
    Query(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
