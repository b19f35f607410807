//! Counter-based sub-stream derivation for reproducible parallel sampling.
//!
//! The sampler draws one base value from the caller's generator per
//! data-parallel section, then derives an independent `ChaCha8Rng` per work
//! item from `(base, item index)`. Results are therefore bit-identical
//! whether the section runs sequentially or across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; full-period 64-bit mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a well-separated seed for work item `index` under `base`.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

/// Generator for one work item of a data-parallel section.
pub fn substream(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(base, index))
}
