//! Smooth log-correlated Gaussian fields on the d-torus, the multiplicative
//! chaos cascades they drive, and the diagnostics used to estimate Fourier
//! dimension of the limiting measure.
//!
//! The pipeline runs bottom-up: radial profiles and scale kernels
//! ([`kernel`]), Gaussian field sampling ([`sampler`]), the cascade itself
//! ([`gmc`]), dimension estimators ([`analysis`]) and the dyadic partition of
//! unity used for localized coefficients ([`pou`]).

pub mod analysis;
pub mod cli;
pub mod error;
pub mod fft;
pub mod gmc;
pub mod grid;
pub mod kernel;
pub mod pou;
pub mod quadrature;
pub mod sampler;

pub use error::{GmcError, Result};
pub use grid::GridSpec;

/// Version string stamped into every artifact.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
