//! Joint input-state-parameter-noise identification for linear structural
//! systems, with virtual sensing of unmeasured responses.
//!
//! The toolkit couples an augmented extended Kalman filter with a one-lag
//! fixed-point smoother and closed-form expectation-maximization updates of
//! the noise covariance matrices, so that input forces, dynamical states,
//! structural parameters, and noise hyperparameters are estimated jointly
//! from sparse, noisy response measurements. It also provides:
//!
//! - a steady-state initializer that tunes process/measurement noise through
//!   stationary Riccati/Lyapunov solutions before the main loop starts,
//! - a Lie-derivative observability rank criterion for vetting candidate
//!   sensor layouts,
//! - a simulator that generates the benchmark datasets used by the
//!   acceptance suite,
//! - file formats (JSON model definitions, CSV time series) shared with the
//!   command-line frontend.

pub mod em;
pub mod filter;
pub mod init;
pub mod io;
pub mod matcore;
pub mod model;
pub mod observability;
pub mod sim;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
