use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite field")]
    NonFiniteField,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("unknown parameter segment `{0}`")]
    UnknownSegment(String),

    #[error("non-finite gradient in parameter segment `{0}`")]
    NonFiniteGradient(String),

    #[error("loss is not deterministic: {first} then {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("degenerate probe: raw amplitude is zero everywhere")]
    DegenerateProbe,

    #[error("unbounded probe: intensity profile never falls below half maximum")]
    UnboundedProbe,

    #[error("coordinate ({0}, {1}) outside [0, 1]^2")]
    CoordinateOutOfRange(f64, f64),

    #[error("window at ({row}, {col}) of size {h}x{w} exceeds object bounds {rows}x{cols}")]
    OutOfBounds {
        row: usize,
        col: usize,
        h: usize,
        w: usize,
        rows: usize,
        cols: usize,
    },

    #[error("negative intensity {0} in loss input")]
    NegativeIntensity(f64),

    #[error("non-finite loss at step {step} (last checkpoint: {checkpoint:?})")]
    NonFiniteLoss {
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("container error: {0}")]
    Container(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),

    #[error("io error at {path}: {source}")]
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

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
