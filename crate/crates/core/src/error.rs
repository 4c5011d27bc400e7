use thiserror::Error;

/// Errors reported by the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Non-finite (NaN/Inf) entries where finite values are required.
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    /// Conflicting matrix/vector dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix required to be symmetric positive definite was not.
    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(String),

    /// Riccati fixed-point iteration failed to converge; by the stationary
    /// theory this indicates the sensor configuration does not render the
    /// system detectable/stabilizable under the given noise.
    #[error("Riccati iteration did not converge: system not detectable/stabilizable with given noise")]
    RiccatiNotDetectable,

    /// Stein equation has no bounded solution.
    #[error("spectral radius {rho:.6} >= 1: Stein equation has no bounded solution")]
    SteinUnstable { rho: f64 },

    /// The forward pass produced non-finite estimates.
    #[error("estimator diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },

    /// Innovation (or predictive) covariance numerically singular.
    #[error("singular covariance at step {step}: {what}")]
    SingularCovariance { step: usize, what: String },

    /// Structural model failed validation.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Dataset or scenario failed validation.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),
}
