//! Energy-efficient federated learning over a wireless cell.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: Lambert W, bracketed bisection, the Dinkelbach ratio loop
//!   and a brute-force grid minimizer.
//! - [`model`]: system parameters and the closed-form energy, time, rate and
//!   iteration-count formulas, plus the constraint checker.
//! - [`fl_sim`]: the DANE-style federated training loop with gradient-descent
//!   (or mini-batch) local solvers and the iteration-bound diagnostics.
//! - [`energy_opt`]: alternating minimization of total user energy under a
//!   completion-time deadline.
//! - [`time_opt`]: bisection on the completion time with a convex feasibility
//!   test; its allocation seeds the energy solver.
//! - [`schemes`]: the baseline allocation schemes used for comparison.
//! - [`harness`]: scenario generation, experiment dispatch and CSV sweeps.

// negated comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy_opt;
pub mod error;
pub mod fl_sim;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod report;
pub mod schemes;
pub mod time_opt;
pub mod units;

pub use error::{Error, Result};
