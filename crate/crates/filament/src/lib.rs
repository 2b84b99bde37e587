//! Numerical laboratory for the binormal flow near a self-similar corner.
//!
//! The crate follows a vortex filament from its self-similar profile through
//! the pseudo-conformally transformed cubic Schrödinger equation, rebuilds
//! curves from filament functions with parallel frames, and measures the
//! asymptotic rates predicted for small perturbations.

pub mod asymptotics;
pub mod frame;
pub mod grid;
pub mod io;
pub mod modes;
pub mod nls;
pub mod ode;
pub mod profile;
pub mod quad;

pub use num_complex::Complex64 as C64;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type CVec3 = nalgebra::Vector3<C64>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("non-finite value encountered at t = {t}")]
    NonFinite {
        t: f64,
        last_good: Option<Box<nls::FieldState>>,
    },
    #[error("requested range is not covered: {0}")]
    OutOfCoverage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Run(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
