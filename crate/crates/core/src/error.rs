use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CalibError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content. `row` and `column` are 1-based; a column of 0
    /// means the whole row.
    #[error("{path}: row {row}, column {column}: {message}")]
    Format {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid data at row {row}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Validation {
        row: usize,
        column: Option<usize>,
        message: String,
    },

    #[error("input contains a non-finite value")]
    NonFiniteInput,

    #[error("index {index} out of range for {bound} classes")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: model expects {expected} classes, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("bin count must be positive")]
    ZeroBins,

    #[error("histogram holds {histogram} samples but n = {n}")]
    CountMismatch { histogram: usize, n: usize },

    #[error("every bin is empty")]
    AllBinsEmpty,

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("candidate scheme list is empty")]
    EmptyCandidateList,

    #[error("degenerate labels: {0}")]
    DegenerateLabels(&'static str),

    #[error("need at least {needed} samples, got {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("model has no fitted parameters")]
    UnfittedModel,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("all calibrated class probabilities are zero")]
    ZeroMassVector,

    #[error("fitting class {class}: {source}")]
    ClassFit {
        class: usize,
        #[source]
        source: Box<CalibError>,
    },

    #[error("objective is not finite at {at:?}")]
    NonFiniteObjective { at: Vec<f64> },

    #[error("line search failed to decrease the objective after {iterations} iterations")]
    LineSearchFailure { iterations: usize },

    #[error("no convergence after {iterations} iterations (gradient max-norm {grad_max_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_max_norm: f64,
    },

    #[error("optimum T = {temperature} lies on the search boundary [{lo}, {hi}]")]
    BoundaryOptimum { temperature: f64, lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("malformed model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl CalibError {
    /// True for failures of the numerical routines themselves, as opposed to
    /// bad input data or usage.
    pub fn is_numerical(&self) -> bool {
        match self {
            CalibError::NonFiniteObjective { .. }
            | CalibError::LineSearchFailure { .. }
            | CalibError::NonConvergence { .. }
            | CalibError::BoundaryOptimum { .. } => true,
            CalibError::ClassFit { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
