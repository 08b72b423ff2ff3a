//! Seed derivation for reproducible parallel Monte Carlo.
//!
//! Every random quantity is drawn from its own stream, addressed by
//! `(seed, domain, index)`. A stream is a [`Xoshiro256PlusPlus`] generator
//! whose state is expanded from the mixed 64-bit key by SplitMix64. Because
//! each stream depends only on its address, results never depend on how work
//! is split across threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator used for every stream.
pub type StreamRng = Xoshiro256PlusPlus;

/// Stream domains. Keeping them distinct guarantees that, for example, the
/// design draw and the null replicates never share a stream even when they are
/// derived from the same seed.
pub mod domain {
    pub const DESIGN: u64 = 0x01;
    pub const NOISE: u64 = 0x02;
    pub const FIXED_NOISE: u64 = 0x03;
    pub const NULL_COLUMN: u64 = 0x04;
    pub const REPLICATE: u64 = 0x05;
    pub const NULL_MASTER: u64 = 0x06;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit key of stream `(seed, domain, index)`.
#[inline]
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let a = mix64(seed.wrapping_add(GOLDEN));
    let b = mix64(a ^ domain.wrapping_mul(GOLDEN));
    mix64(b ^ index.wrapping_add(GOLDEN).wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Opens the stream `(seed, domain, index)`.
#[inline]
pub fn stream(seed: u64, domain: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, domain, index))
}
