//! Missing-link imputation for egocentrically sampled networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod distance;
pub mod downstream;
pub mod dyadic;
pub mod error;
pub mod impute;
pub mod montecarlo;
pub mod netmodel;
pub mod rng;

pub use error::{Error, Result};
