//! Risk predictions and Monte Carlo checks for ensembles of random-feature
//! ridge regression models.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod kernel_lab;
pub mod numeric;
pub mod output;
pub mod risk_theory;
pub mod rng;
pub mod scaling_laws;
pub mod simulator;
pub mod spectra;
pub mod verify;

pub use error::{Error, Result};
