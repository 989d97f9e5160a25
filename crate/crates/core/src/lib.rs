//! SOSREP: Sobolev-regularized pre-density estimation.
//!
//! The crate fits `f = Σ_i α_i k(x_i, ·)` by minimizing
//! `−(1/N) Σ log f(x_i)² + ‖f‖²` in the RKHS of a sampled
//! Single-Derivative-Order kernel, and reports the pre-density `f²`.
//! Around the estimator it provides closed-form kernel and KDE baselines,
//! Fisher-divergence hyperparameter selection, an analytic two-block
//! oracle and an anomaly-detection evaluation harness.

// Negated comparisons are how NaN is rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cli;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod rng;
pub mod score;
pub mod sdo;
pub mod solver;
pub mod two_block;

pub use error::{Error, Result};
