//! Seed derivation.
//!
//! One run seed reproduces everything. Each consumer of randomness draws from
//! its own ChaCha8 stream keyed by `(seed, Stream)`; per-episode environment
//! seeds are mixed from the base seed and the episode index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams split from a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Env = 1,
    Policy = 2,
    Shuffle = 3,
    Eval = 4,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer over `seed` and `index`.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Environment seed for episode `episode` of a run (or evaluation) seeded with `seed`.
pub fn episode_seed(seed: u64, stream: Stream, episode: u64) -> u64 {
    mix(mix(seed, stream as u64), episode)
}
