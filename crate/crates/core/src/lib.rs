//! Numerical laboratory for Volterra Gaussian processes `X(t) = ∫_0^t K(t,s) dW(s)`.

pub mod asymptotics;
pub mod covariance;
pub mod error;
pub mod grid_hilbert;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod localtime;
pub mod quad;
pub mod rng;
pub mod silt;
pub mod simulate;

pub use error::{Error, Result};
pub use rng::Seed;
