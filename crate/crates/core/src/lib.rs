//! Slow-time phase-coded FMCW MIMO radar receive chain with reiterative
//! minimum mean squared error (RMMSE) adaptive pulse compression.
//!
//! The crate is organised along the processing flow:
//!
//! * [`model`]: radar configuration, targets, Hadamard slow-time codes
//! * [`synth`]: dechirped receive-cube synthesis with AWGN
//! * [`stretch`]: compensation-matrix range compression
//! * [`chain`]: doppler, decoding, angle and coherent integration stages
//! * [`apc`]: baseline and MIMO RMMSE filters
//! * [`metrics`]: PSL/SINR and moving-statistics comparison metrics
//! * [`rawio`], [`scenario`]: file formats and the scenario runner

pub mod apc;
pub mod chain;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rawio;
pub mod scenario;
pub mod stretch;
pub mod synth;

pub use error::{Error, Result};
