use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {column} is constant and cannot be standardized")]
    ConstantColumn { column: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("linear system is singular or rank deficient")]
    SingularSystem,

    #[error("solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("design is not orthogonal (off-diagonal Gram entry {value:e} at ({row}, {col}))")]
    NotOrthogonal { row: usize, col: usize, value: f64 },

    #[error("first-stage support is empty")]
    EmptySupport,

    #[error("noise level estimate collapsed to zero (interpolating fit)")]
    DegenerateSigma,

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration limit of {0} reached")]
    IterationLimit(usize),

    #[error("response is identically zero after centering")]
    ZeroResponse,

    #[error("fold {fold} has fewer than one observation")]
    FoldTooSmall { fold: usize },

    #[error("unknown scenario '{0}' (valid: IND, RC.IND, RNC.IND, UTOEP-B, UTOEP-S, RC.TOEP-S, RNC.TOEP-S)")]
    UnknownScenario(String),

    #[error("signal variance is zero; noise level cannot be calibrated")]
    ZeroSignal,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("cannot parse value at row {row}, column {col}: '{value}'")]
    ParseFailure { row: usize, col: usize, value: String },

    #[error("response column '{0}' not found")]
    MissingResponse(String),

    #[error("column {column} has non-positive values after shift")]
    NonPositiveAfterShift { column: usize },

    #[error("covariance matrix is singular even after ridge regularization")]
    SingularCovariance,

    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV failure: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON failure: {0}")]
    Json(#[from] serde_json::Error),
}
