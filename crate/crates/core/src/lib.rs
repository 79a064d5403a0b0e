//! Blind single-sample estimation of average noise power, average signal
//! power and SNR for multi-antenna receivers whose channels are sparse in
//! beamspace.
//!
//! The floating-point path is
//! [`beamspace::dft_unitary`] → [`beamspace::power_sort`] →
//! [`estimator::estimate`]. [`hwmodel`] mirrors the same computation in
//! fixed point the way a streaming FFT / sorter / separating-unit datapath
//! would, and [`harness`] runs Monte-Carlo sweeps and validation suites over
//! both.

pub mod baselines;
pub mod beamspace;
pub mod channel;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod hwmodel;

pub use error::{Error, Result};
pub use num_complex::Complex64;
