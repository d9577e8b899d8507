//! Seeded random streams.
//!
//! Every random decision in the toolkit draws from a ChaCha8 generator keyed by
//! the run seed, with a distinct stream id per purpose. ChaCha is a
//! counter-based cipher, so a (seed, stream) pair yields the same sequence on
//! every platform, and consuming one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Init,
    Shuffle,
    Split,
    Upsample,
    Folds,
    Stacker,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::Split => 3,
            Stream::Upsample => 4,
            Stream::Folds => 5,
            Stream::Stacker => 6,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Child seed for numbered sub-tasks such as cross-validation folds
/// (splitmix64 finalizer over `seed + salt`).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
