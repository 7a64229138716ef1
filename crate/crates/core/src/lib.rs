// Negated float comparisons treat NaN as a failure on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod clustering;
pub mod diagnostics;
pub mod error;
pub mod nn;
pub mod oracles;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod specialist;
pub mod stream;
pub mod vae;

pub use error::{CltsError, Result};
