//! Seed splitting.
//!
//! Every random decision in a run flows from one 64-bit seed. Independent
//! streams are derived by hashing `(seed, stream, index)` with SplitMix64 and
//! seeding a ChaCha8 generator from the result, so an episode's randomness
//! never depends on how many other episodes ran before it or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    GraphGen = 1,
    EnvReset = 2,
    EnvNoise = 3,
    PolicySampling = 4,
    Init = 5,
    Minibatch = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for `stream` and `index` (e.g. iteration × episode).
pub fn derive(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream as u64)) ^ splitmix64(index.wrapping_add(0xA5A5)))
}

pub fn stream(seed: u64, stream: Stream, index: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, stream, index))
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn uniform(rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    rng.random::<f64>()
}
