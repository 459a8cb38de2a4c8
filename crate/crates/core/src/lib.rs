//! Closed-form constrained approximate dynamic programming (C-ADP).
//!
//! The solver in [`solver`] runs a Riccati-like backward recursion over a
//! nominal trajectory and produces one closed-form control function per
//! stage. Each stage policy minimizes a quadratic approximation of the
//! cost-to-go subject to a single constraint that is affine in the control,
//! so the constraint holds for every state, not just along the nominal.
//!
//! [`cbf`] builds that affine constraint from one or many barrier functions,
//! [`horizon`] wraps the solver into a receding-horizon controller, and
//! [`sim`] closes the loop on a continuous-time plant with a zero-order hold.
//! [`robot`] and [`baselines`] carry the differential-drive benchmark.
//!
//! The crate is `no_std` and only needs `alloc`. Everything is generic over
//! fixed state/control dimensions through `nalgebra` static matrices.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod cbf;
mod error;
pub mod horizon;
pub mod plant;
pub mod robot;
pub mod sim;
pub mod solver;

pub use error::Error;

/// Column vector of fixed dimension.
pub type Vector<const D: usize> = nalgebra::SVector<f64, D>;
/// Matrix of fixed dimensions.
pub type Matrix<const R: usize, const C: usize> = nalgebra::SMatrix<f64, R, C>;
