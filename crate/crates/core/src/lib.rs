//! Random sampling and reconstruction in weighted reproducing kernel subspaces.
//!
//! The crate builds concrete kernel/frame systems (B-spline and Gaussian
//! generators, orthonormalized or Gram-dual), computes the stability and
//! probability constants attached to random sampling in the associated
//! finite-dimensional subspaces, verifies the two-sided sampling inequalities
//! by Monte Carlo, and recovers coefficients from random samples by a
//! least-squares solve of the sampling matrix.
//!
//! Modules follow the pipeline:
//!
//! * [`weights`] — submultiplicative weights `w` and `w`-moderate weights `v`.
//! * [`kernel`] — reproducing kernels, the projector `T`, Wiener-type norms.
//! * [`subspace`] — lattice bases, synthesis/analysis maps, `C_K` and `C*`.
//! * [`bounds`] — covering numbers, Bernstein tails, deviation and stability
//!   constants, condition-number bound.
//! * [`sampling`] — densities, i.i.d. draws, empirical stability experiments.
//! * [`reconstruct`] — sampling matrix, least-squares recovery, condition
//!   numbers.
//! * [`config`], [`report`], [`runner`], [`acceptance`] — experiment plumbing.
//!
//! Every randomized routine takes an explicit seed and is reproducible
//! bit-for-bit; parallel paths only use order-independent reductions.

pub mod acceptance;
pub mod bounds;
pub mod config;
pub mod error;
pub mod kernel;
pub mod quad;
pub mod reconstruct;
pub mod report;
pub mod runner;
pub mod sampling;
pub mod subspace;
pub mod weights;

pub use error::{Error, Result};
