//! Jammer-resilient multi-antenna time synchronization.
//!
//! A receiver with [`B`] antennas searches for the arrival time of a secret
//! length-[`K`] BPSK preamble while a multi-antenna jammer is active. For
//! each candidate delay the detector estimates the jammer subspace with a
//! short power iteration, projects it out implicitly and compares the
//! projected correlation energy against a threshold.
//!
//! - [`fxp`]: fixed-point arithmetic used by the bit-accurate backend.
//! - [`kernels`]: PRNG, pseudonormalization, inverse square root, adder trees.
//! - [`detector`]: the synchronizer, on a float or fixed-point datapath.
//! - [`airlink`]: receive-stream synthesis with the four jammer behaviors.
//! - [`xharness`]: Monte Carlo threshold sweeps, CSV output, self test.

pub mod airlink;
pub mod detector;
pub mod fxp;
pub mod iq;
pub mod kernels;
pub mod xharness;

/// Receive antennas.
pub const B: usize = 16;
/// Synchronization sequence length.
pub const K: usize = 16;
/// Jammer dimensions removed by the detector.
pub const I_MAX: usize = 2;
