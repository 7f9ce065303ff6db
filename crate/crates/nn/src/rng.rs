//! Deterministic RNG derivation.
//!
//! All randomness in the workspace flows from one user-facing seed. Derived
//! generators are keyed by small integers (step, invocation, site) through a
//! splitmix-style mixer so distinct keys land on distinct ChaCha streams and
//! replaying a step reproduces its masks bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// splitmix64 finalizer; decorrelates consecutive integer keys.
#[inline]
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Combine two keys into one stream id.
#[inline]
pub fn mix2(a: u64, b: u64) -> u64 {
    mix(mix(a).wrapping_add(b))
}

/// A ChaCha generator on the stream addressed by `(seed, key)`.
pub fn derive(seed: u64, key: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}
