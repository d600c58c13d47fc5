//! Deterministic RNG stream derivation.
//!
//! Every random draw in the crate flows from a single 64-bit seed through
//! splitmix64-mixed stream keys, so replication r of bootstrap b under seed s
//! is the same stream no matter how work is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a sequence of stream tags into one 64-bit key.
pub(crate) fn derive(seed: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(seed ^ 0x5180_9E86_26F4_6A9B);
    for &t in tags {
        s = splitmix64(s ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    s
}

/// Counter-based stream: identical `(seed, tags)` yields an identical RNG.
pub(crate) fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}
