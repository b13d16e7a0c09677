//! Isotonic empirical Bayes shrinkage for Gaussian sequence models.
//!
//! The crate covers:
//! - the global EB collapse rule and classical shrinkage families ([`shrinkage`]);
//! - PAVA projections and LCM-of-CUSUM variance profiles ([`isotonic`]);
//! - cross-fit weighted isotonic EB with Gaussian cloning ([`crossfit`]);
//! - order-restricted polynomial EB ([`deaton`]);
//! - a Monte Carlo risk laboratory ([`risk_lab`]).
//!
//! The `isoeb` binary exposes all of it on the command line ([`cli`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod crossfit;
pub mod deaton;
pub mod error;
pub mod io;
pub mod isotonic;
pub mod plot;
pub mod risk_lab;
pub mod seq_core;
pub mod shrinkage;
pub mod stats;

pub use error::{Error, Result};
