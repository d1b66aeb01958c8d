//! Experiment driver for the `doppler` crate: config parsing and the
//! `run`, `sweep`, `spectrum`, `filter-design`, `compare` and `calibrate`
//! commands. The `doppler` binary is a thin CLI over these functions.

pub mod analysis;
pub mod calibrate;
pub mod compare;
pub mod config;
pub mod error;
mod output;
pub mod run;

pub use error::{HarnessError, Result};
