//! Error type shared by every module of the laboratory.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter {name} = {value} outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: String,
    },

    #[error("velocity requested at the kink s = {0} of a piecewise-linear loop")]
    Kink(f64),

    #[error("bump support [{lo}, {hi}] must lie strictly inside (0, 1)")]
    BumpSupport { lo: f64, hi: f64 },

    #[error("bump supports overlap: |s - t| = {separation} <= {required}")]
    ParameterCollision { separation: f64, required: f64 },

    #[error("transport diverged: {0}")]
    TransportDivergence(String),

    #[error("map is not an immersion at the probe point (min/max singular value {ratio:e})")]
    ImmersionFailure { ratio: f64 },

    #[error("rank mismatch: declared {declared}, observed {observed}")]
    RankMismatch { declared: usize, observed: usize },

    #[error("chart mismatch: {0}")]
    ChartMismatch(String),

    #[error("Newton iteration for the implicit function diverged at {0}")]
    NewtonDivergence(String),

    #[error("constraint surface mismatch: {0}")]
    SurfaceMismatch(String),

    #[error("link {link} leaves the principal logarithm domain (max |angle| = {angle})")]
    LogBranch { link: String, angle: f64 },

    #[error("link configuration is not flat: plaquette residual {residual:e}")]
    ConstraintViolation { residual: f64 },

    #[error("numerical rank collapse: {0}")]
    RankCollapse(String),

    #[error("loops do not agree on [0, {s0}]: {detail}")]
    LoopsDisagree { s0: f64, detail: String },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
}

impl LabError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
