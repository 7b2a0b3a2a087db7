use thiserror::Error;

/// Errors produced by the estimation, selection, and I/O layers.
///
/// Numerical degeneracies that the paper's protocol handles per point
/// (singular local systems, zero resultants) are reported through result
/// flags, not through this enum; these variants cover contract violations
/// and unrecoverable states.
#[derive(Debug, Error)]
pub enum Error {
    #[error("angle value is not finite: {0}")]
    NonFiniteAngle(f64),

    #[error("angle series is empty")]
    EmptySeries,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid bandwidth matrix: {0}")]
    InvalidBandwidth(String),

    #[error("degree {degree} is not supported for {dim}-dimensional predictors")]
    UnsupportedDegree { degree: usize, dim: usize },

    #[error("every cross-validation candidate was fully penalized")]
    NoValidBandwidth,

    #[error("covariate axis {axis} has zero variance; no bandwidth scale exists")]
    DegenerateAxis { axis: usize },

    #[error("curvature matrix is indefinite; the optimal local bandwidth is undefined")]
    IndefiniteCurvature,

    #[error("asymptotic inputs are singular at this point: {0}")]
    SingularPoint(String),

    #[error("outside the model domain: {0}")]
    OutsideDomain(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("column '{0}' not found in the header")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    RowParse { row: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("rate probe is degenerate: {0}")]
    ProbeInvalid(String),

    #[error("all {0} replicates failed")]
    AllReplicatesFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
