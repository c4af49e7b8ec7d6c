//! Regularized e-processes and e-possibilistic inferential models.
//!
//! The crate provides possibility contours and their Choquet calculus,
//! calibrators and the regularizers built from them, a few concrete
//! e-process families, the regularized possibilistic IM with its decision
//! rules, and a Monte Carlo harness for auditing validity properties.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod eprocess;
pub mod error;
pub mod im;
pub mod possibility;
pub mod regularization;
pub mod special;
pub mod util;
pub mod validity_sim;

pub use error::{Error, Result};
