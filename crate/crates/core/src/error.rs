use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantization parameters: {0}")]
    InvalidQParams(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("ratio {ratio} cannot be represented with a {width}-bit multiplier")]
    RatioOutOfRange { ratio: f64, width: u32 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("quantization parameter mismatch: expected {expected}, got {actual}")]
    QParamsMismatch { expected: String, actual: String },

    #[error("division by non-positive denominator {0}")]
    NonPositiveDivisor(i64),

    #[error("divisor {0} exceeds the 48-bit divider range")]
    DivisorOutOfRange(i64),

    #[error("dividend {0} exceeds the 48-bit divider range")]
    DividendOutOfRange(i64),

    #[error("softmax row {row} has non-positive denominator {sum}")]
    DegenerateDenominator { row: usize, sum: i64 },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing calibration for edge `{0}`")]
    MissingCalibration(String),

    #[error("non-finite value in layer `{layer}`")]
    NonFiniteActivation { layer: String },

    #[error("empty calibration batch")]
    EmptyBatch,

    #[error("csv column `{0}` not found")]
    MissingColumn(String),

    #[error("malformed numeric cell {value:?} at row {row}, column `{column}`")]
    MalformedCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("need at least {needed} contiguous rows, found {found}")]
    TooFewRows { needed: usize, found: usize },

    #[error("scaler used before fitting")]
    ScalerNotFitted,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    Empty,

    #[error("artifact format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: String },

    #[error("artifact: {0}")]
    Artifact(String),

    #[error("tensor `{name}` holds {found} values, manifest declares {expected}")]
    TensorLength {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub(crate) fn in_layer(self, layer: impl Into<String>) -> Self {
        Error::Layer {
            layer: layer.into(),
            source: Box::new(self),
        }
    }
}
