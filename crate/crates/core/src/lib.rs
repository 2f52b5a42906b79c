//! Linear-inversion quantum tomography with unknown detectors.
//!
//! Two protocols reconstruct a signal from the outputs of an uncalibrated
//! detector, given a set of known probe states and their measured patterns:
//!
//! - **standard detector tomography** estimates the detector first,
//!   `A = F R⁺`, then inverts it: `A_s = (F R⁺)⁺`;
//! - **data-pattern tomography** fits the signal data with the patterns and
//!   mixes the probes with the same coefficients: `A_p = R F⁺`.
//!
//! The two coincide exactly when the reverse-order law `(F R⁺)⁺ = R F⁺`
//! holds, and the Galperin–Waksman representation of `(XY)⁺` explains which
//! one amplifies noise more in each regime.
//!
//! Modules:
//! - [`matlib`]: SVD, Moore–Penrose pseudoinverse, Penrose checks, the
//!   Galperin–Waksman decomposition;
//! - [`qstate`]: operator bases, Bloch/affine decompositions, Born rule,
//!   random states and square-root measurements;
//! - [`protocols`]: the two inversion matrices, noise, MSE and regime
//!   diagnostics;
//! - [`homodyne`]: coherent probes, lossy quadrature measurements and Wigner
//!   functions in a truncated Fock basis;
//! - [`bench`]: the experiment runner behind the `tomolin` CLI.

#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod homodyne;
pub mod matlib;
pub mod protocols;
pub mod qstate;
pub mod rngstream;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Dense real matrix, the carrier for detector, probe and pattern matrices.
pub type RealMatrix = nalgebra::DMatrix<f64>;
/// Dense complex matrix, the carrier for states and measurement operators.
pub type ComplexMatrix = nalgebra::DMatrix<Complex64>;
pub type RealVector = nalgebra::DVector<f64>;
pub type ComplexVector = nalgebra::DVector<Complex64>;
