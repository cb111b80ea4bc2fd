//! Inflationary flows: probability-flow ODEs whose forward direction inflates
//! the data distribution into a Gaussian latent space, optionally compressing
//! low-variance directions, and whose reverse direction generates.

// Negated float comparisons (`!(v > 0.0)`) deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checks;
pub mod cli;
pub mod datasets;
pub mod denoiser;
pub mod error;
pub mod hmc;
pub mod linalg;
pub mod pfode;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
