//! Experiment runner for kernel spectral clustering.
//!
//! Each subcommand of the `ksc` binary is a function here that takes a plain
//! config struct and returns records, so the experiments can also be driven
//! from tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod concentration;
pub mod config;
pub mod error;
pub mod figure3;
pub mod meancheck;
pub mod output;

pub use error::{CliError, CliResult};
