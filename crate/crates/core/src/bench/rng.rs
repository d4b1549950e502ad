//! Portable seeding: SplitMix64 (Steele, Lea and Flood's 64-bit mixer).
//!
//! Trial `i` of a suite uses the `i`-th output of a SplitMix64 seeded with the suite
//! seed, so any language with SplitMix64 reproduces the same trial scenes.

use rand_core::{RngCore, SeedableRng};
pub use rand_xoshiro::SplitMix64;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Sub-seeds for `n` trials.
pub fn trial_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = seeded(master);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Uniform in `[0, 1)` from the top 53 bits of one output.
pub fn unit_f64(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
