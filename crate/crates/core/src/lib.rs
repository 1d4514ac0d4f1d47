//! Conservative spectral-Lagrangian solver for the space-homogeneous
//! Boltzmann equation.
//!
//! The collision operator is evaluated in Fourier space as a weighted
//! convolution ([`collision`]), corrected onto the discrete collision
//! invariants by a small constrained least-squares projection
//! ([`conserve`]), and advanced with explicit Runge-Kutta steps
//! ([`integrate`]).

pub mod cli;
pub mod collision;
pub mod conserve;
pub mod diagnostics;
mod error;
mod fft;
pub mod grid;
pub mod integrate;
pub mod kernel;
pub mod oracle;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
pub use num_complex::Complex64;
