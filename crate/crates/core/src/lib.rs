//! Solver and verification workbench for double divergence form elliptic
//! equations with measure boundary data on intervals and disks.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops
// mirror the formulas in the numerical kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod linalg;
pub mod measures;
pub mod mollify;
pub mod oracle1d;
pub mod par;
pub mod quadrature;
pub mod solver;
pub mod trace;
pub mod weakform;

pub use error::{Error, Result};
