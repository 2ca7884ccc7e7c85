//! Sparse, prototype-based counterfactual explanations for multivariate
//! time-series classifiers.

pub mod classifier;
pub mod data;
pub mod engine;
pub mod error;
pub mod io;
pub mod metrics;
pub mod proto;
pub mod rules;
pub mod synth;

pub use error::{CfxError, Result};

/// Derives an independent stream seed from a base seed and a path of indices
/// (SplitMix64 finalizer applied per component).
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts
        .iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// FNV-1a hash of a string; stable across platforms and releases.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
