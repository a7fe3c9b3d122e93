//! Homogenization in energy for oscillatory linear kinetic equations.
//!
//! The crate builds the memory kernels and Volterra equations that arise as
//! ε→0 limits of kinetic models whose coefficients oscillate in the energy
//! variable as functions of `E/ε`, solves the oscillatory problems directly,
//! and measures how fast the two agree.

pub mod cell_calculus;
pub mod diagnostics;
pub mod energy_boltzmann;
pub mod error;
pub mod expm;
pub mod memory_kernel;
pub mod multiscale_ode;
pub mod oscillator;
pub mod quadrature;
pub mod transport;
pub mod volterra;

#[cfg(feature = "harness")]
pub mod harness;

pub use error::{Error, Result};
