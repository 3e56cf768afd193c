use thiserror::Error;

/// Errors produced by simulation, data handling, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown benchmark spec `{0}`")]
    UnknownSpec(String),

    #[error("one-step map produced a non-finite component ({value})")]
    StepDiverged { value: f64 },

    #[error("trajectory {trajectory} diverged at step {step} (component = {value})")]
    TrajectoryDiverged {
        trajectory: usize,
        step: usize,
        value: f64,
    },

    #[error("k-nearest-neighbor query with k = {k} on a store of {size} pairs")]
    KnnTooLarge { k: usize, size: usize },

    #[error("latent dimension {0} has zero variance; correlation is undefined")]
    ZeroVariance(usize),

    #[error("batch loss is non-finite ({0}); refusing to differentiate")]
    NonFiniteLoss(f64),

    #[error("gradient contains a non-finite component; optimizer step skipped")]
    NonFiniteGradient,

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("{excluded} of {total} rollout paths were non-finite, above the {percent}% cap")]
    TooManyExcluded {
        excluded: usize,
        total: usize,
        percent: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
