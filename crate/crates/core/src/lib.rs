#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bvp;
pub mod calculus;
pub mod error;
pub mod kernels;
pub mod lattice;
pub mod mittag;
pub mod specfun;
pub mod summation;

pub use error::{Error, Result};
