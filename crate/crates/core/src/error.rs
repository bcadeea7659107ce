use thiserror::Error;

use crate::dynamics::ModelId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("zero-length position vector has no spherical representation")]
    ZeroVector,

    #[error("missing input for {model:?} state: {what}")]
    MissingInput { model: ModelId, what: &'static str },

    #[error("inverse range must be positive, got {0}")]
    NonpositiveInverseRange(f64),

    #[error("elevation {0} rad is too close to the pole")]
    ElevationSingularity(f64),

    #[error("discrete step left the valid state domain ({0})")]
    StepLeftDomain(&'static str),

    #[error("state has dimension {got}, {model:?} expects {expected}")]
    DimensionMismatch {
        model: ModelId,
        expected: usize,
        got: usize,
    },

    #[error("covariance factorization failed after jitter retries")]
    FactorizationFailed,

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("unscented parameters give n + lambda = {0} (must be > 0)")]
    InvalidUtParams(f64),

    #[error("measurement has {0} components, expected 2 or 3")]
    MeasurementDimension(usize),

    #[error("all predicted mode probabilities vanished")]
    DegenerateProbabilities,

    #[error("sigma point of the inverse range crosses zero")]
    SigmaPointCrossesZero,

    #[error("phase durations sum to {sum} s but the scenario lasts {total} s")]
    PhaseSumMismatch { sum: f64, total: f64 },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
