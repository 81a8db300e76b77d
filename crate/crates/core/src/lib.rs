//! Allocation-only core of the ptychography regularizer lab.
//!
//! Everything in this crate is pure computation over owned buffers: complex
//! field containers and their numeric kernels, the synthetic forward model,
//! an ePIE reconstruction engine with a per-epoch regularization hook, the
//! regularization operator library, the pipeline genome that composes those
//! operators, image-quality metrics, and the bookkeeping of the evolutionary
//! search (action policy, history compression, lineage).
//!
//! File formats, HTTP clients, the discovery service and the CLI live in the
//! `ptylab` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod discovery;
pub mod error;
pub mod evolution;
pub mod fft;
pub mod field;
pub mod metrics;
pub mod pipeline;
pub mod recon;
pub mod regops;
pub mod scripted;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use field::{Axis, ComplexField, Field, RealField, Shape};
pub use num_complex::Complex64;

/// Derives an independent 64-bit stream seed from a master seed and a
/// sequence of stream labels (SplitMix64 finalizer over the fold).
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    labels.iter().fold(mix(master), |acc, &l| mix(acc ^ mix(l)))
}
