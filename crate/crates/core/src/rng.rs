//! Seeded random streams.
//!
//! Every user owns one independent ChaCha stream per purpose. Streams are
//! addressed by `(seed, user, purpose)` through ChaCha's 64-bit stream id,
//! so the draws a user consumes for one purpose never shift the sample path
//! of another user or another purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Arrivals = 0,
    Channel = 1,
    CsiError = 2,
    ServiceRate = 3,
    /// Free-form streams for diagnostics and checks outside the slot loop.
    Auxiliary = 4,
}

const PURPOSE_BITS: u32 = 8;

/// Opens the stream for `(seed, user, purpose)`.
pub fn stream(seed: u64, user: usize, purpose: Purpose) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((user as u64) << PURPOSE_BITS) | purpose as u64);
    rng
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `replicate` derived from `base`. Replicate 0 keeps the base seed.
pub fn replicate_seed(base: u64, replicate: usize) -> u64 {
    if replicate == 0 {
        base
    } else {
        mix(base ^ mix(replicate as u64))
    }
}
