//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by kernel construction, fitting, tuning and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("radial grid tail criterion not met after {doublings} doublings (r_max = {r_max})")]
    RadialGridTail { doublings: usize, r_max: f64 },

    #[error("quadrature did not converge: estimate {estimate}, estimated error {error_estimate}")]
    QuadratureNonConvergence { estimate: f64, error_estimate: f64 },

    #[error("zero density at data point {index}")]
    ZeroDensity { index: usize },

    #[error("optimizer diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("initialization produced a zero density value after {attempts} draws")]
    DegenerateInitialization { attempts: usize },

    #[error("vanishing density at query point")]
    VanishingDensity,

    #[error("all {0} rows skipped because of vanishing density")]
    AllRowsSkipped(usize),

    #[error("all tuning candidates failed")]
    AllCandidatesFailed,

    #[error("profile too short: need at least {needed} entries, got {got}")]
    ProfileTooShort { needed: usize, got: usize },

    #[error("no positive real solution of the two-block system (residual {residual:e})")]
    NoPositiveSolution { residual: f64 },

    #[error("single-class labels: AUC needs both classes")]
    SingleClass,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing or non-finite values on lines {lines:?}")]
    MissingValues { lines: Vec<usize> },

    #[error("non-binary label {value:?} at line {line}")]
    NonBinaryLabel { line: usize, value: String },

    #[error("labels required for this operation")]
    LabelsRequired,

    #[error("missing cell for method {method} on dataset {dataset}")]
    MissingCell { method: String, dataset: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::MissingValues { .. } | Error::NonBinaryLabel { .. } => {
                "parse"
            }
            Error::InvalidParameter(_)
            | Error::DimensionMismatch { .. }
            | Error::EmptyInput(_)
            | Error::ProfileTooShort { .. }
            | Error::LabelsRequired
            | Error::MissingCell { .. }
            | Error::SingleClass => "validation",
            Error::Serialization(_) => "serialization",
            _ => "numerical",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        self.kind() == "numerical"
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
