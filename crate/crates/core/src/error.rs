use thiserror::Error;

/// Errors raised by the numerical kernels, solvers and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e}, threshold {threshold:e})")]
    NotPositiveDefinite {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("power iteration did not converge after {iterations} iterations (last change {change:e})")]
    DidNotConverge { iterations: usize, change: f64 },

    #[error("R_H1 - R_0 is not positive definite; the two hypotheses are not distinguishable")]
    IllPosedDetection,

    #[error("noise covariance is not positive definite")]
    SingularNoise,

    #[error("invalid generator configuration: {0}")]
    InvalidGenerator(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("power residual could not be bracketed for the multiplier search")]
    InfeasibleMu,

    #[error("too many devices for exact pattern enumeration: {0} > {max}", max = crate::random_access::MAX_DEVICES)]
    TooManyDevices(usize),

    #[error("insufficient calibration samples: n_cal * alpha = {0} < 50")]
    InsufficientCalibration(f64),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
