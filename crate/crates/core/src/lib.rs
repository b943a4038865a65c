//! Numerical laboratory for random multilinear operator forms.
//!
//! The crate is organised by subsystem:
//!
//! * [`finite_group`] exact Fourier analysis on `Z_p^d x Z_p` and the quadratic
//!   obstruction to trilinear smallness.
//! * [`random_measure`] seeded selector variables and the centered kernels built
//!   from them.
//! * [`linear_forms`] rational linear forms in two variables, family validation
//!   and the change of variables that straightens two forms into coordinates.
//! * [`operator`] the multilinear operators, scalar forms and norm estimators.
//! * [`reduction`] the Cauchy-Schwarz degree reduction and its exceptional set.
//! * [`trace`] exact combinatorial trace moments with Monte Carlo counterparts.
//! * [`random_matrix`] the fully independent matrix model.
//! * [`harness`] parameter scans and scaling-exponent fits.

pub mod error;
pub mod finite_group;
pub mod harness;
pub mod linalg;
pub mod linear_forms;
pub mod operator;
pub mod random_matrix;
pub mod random_measure;
pub mod reduction;
pub mod rng;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
