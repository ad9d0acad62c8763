//! Numerical laboratory for the least-squares drift estimator of the
//! second-kind fractional Ornstein-Uhlenbeck process
//!
//! ```text
//! dX_t = -α X_t dt + dY_t,   X_0 = 0,   Y_t = ∫_0^t e^{-s} dB^H_{a_s},   a_t = H e^{t/H}
//! ```
//!
//! The crate is organized bottom-up:
//!
//! * [`analytic`]: covariance kernel, special functions, quadrature and the
//!   constants `σ`, `ρ`, `b_T`;
//! * [`gram`]: time grids and the covariance matrix of the noise increments;
//! * [`chaos`]: second-chaos kernels as matrices, contractions and the
//!   diagnostic tables;
//! * [`mc`]: seeded Monte Carlo for the normalized estimation error and
//!   Kolmogorov distances;
//! * [`cli`]: the `fou2` command line.

pub mod analytic;
pub mod chaos;
pub mod cli;
pub mod error;
pub mod gram;
pub mod mc;

pub use error::{Error, Result};
