//! Experiment harness, file formats and command line for the multi-resolution filter.

pub mod cli;
pub mod config;
pub mod export;
pub mod harness;
pub mod io;
