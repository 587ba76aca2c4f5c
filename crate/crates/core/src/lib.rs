#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod expert;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod router;
pub mod stream;

pub use error::{Error, Result};
