//! Multi-resolution filtering for linear Gaussian spatio-temporal state-space models.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure computation:
//! domain partitioning, the multi-resolution decomposition of a covariance
//! matrix, the block-sparse factor algebra used by the filter update, the
//! exact dense Kalman filter used as an oracle, baseline filters, the particle
//! extension for time-varying parameters, and scoring functions.
//!
//! File formats, the experiment harness and the command line live in the `mrf`
//! companion crate.
//!
//! Index conventions: a [`partition::PartitionTree`] fixes an internal
//! ("hierarchical") ordering of the grid in which every region is a contiguous
//! index range. [`filter::FilterMoments`] are stored in that order; dense
//! moments ([`filter::DenseMoments`]) and model inputs use the user's grid
//! order.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod covariance;
pub mod dense;
pub mod error;
pub mod factor;
pub mod filter;
pub mod grid;
pub mod math;
pub mod metrics;
pub mod mrd;
pub mod particle;
pub mod partition;
pub mod rng;
pub mod sparse;
pub mod ssm;

pub use error::{Error, Result};
