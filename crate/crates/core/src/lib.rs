//! Desk-scale numerics for the fractional Calderón problem and its reduction
//! to the classical one.
//!
//! The crate builds weighted extension problems on a truncated half-space
//! `[-X, X]^n × [0, Y]`, assembles fractional, local and Schrödinger
//! Dirichlet-to-Neumann matrices, integrates extensions vertically to obtain
//! a-harmonic potentials, and measures Runge approximation costs and
//! unique-continuation exponents on the result.

// `!(x > 0.0)` is used on purpose so NaN fails the check; index loops
// mirror the stencil formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dtn;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod harness;
pub mod heat;
pub mod linalg;
pub mod metric;
pub mod par;
pub mod reduction;
pub mod runge;
pub mod smallness;
pub mod sobolev;
pub mod tangential;

pub use error::{Error, Result};
pub use par::Execution;
