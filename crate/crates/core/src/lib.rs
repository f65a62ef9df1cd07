#![cfg_attr(not(any(test, feature = "std")), no_std)]

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod cogeometry;
pub mod dataset;
pub mod error;
pub mod expert;
pub mod linalg;
pub mod netens;
pub mod pipeline;
pub mod spectral;
pub mod synth;
pub mod validate;
pub mod whiten;

pub use error::{Error, Result};
