#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod basis;
pub mod cli;
pub mod eigensolve;
pub mod error;
pub mod field;
pub mod localsolve;
pub mod mesh;
pub mod quadrature;
pub mod recovery;
pub mod residual;
pub mod sparse;
pub mod study;

pub use error::{HdgError, Result};
