//! Dynamical quantum state tomography.
//!
//! A fixed POVM is measured at several steps of a known channel (or at
//! rational times of a semigroup). This crate builds such schemes, decides
//! whether they are informationally complete or complete on bounded-rank
//! states, reconstructs states from their statistics, and runs seeded Monte
//! Carlo sweeps comparing the empirical number of required steps to the
//! predicted thresholds.
//!
//! Hermitian operators are handled in the real coordinates of
//! [`herm::HermBasis`]; every scheme matrix is expressed in them.

pub mod channels;
pub mod completeness;
pub mod error;
pub mod experiments;
pub mod herm;
pub mod linalg;
pub mod reconstruction;
pub mod sampling;
pub mod schemes;

pub use error::{Error, Result};
