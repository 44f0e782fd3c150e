//! Named, independent random streams derived from a base seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ClassMeans = 1,
    Shift = 2,
    Sample = 3,
    ModelInit = 4,
    TrainData = 5,
    TrainShuffle = 6,
    TrainEval = 7,
    HeldOut = 8,
    StreamBatch = 9,
    Derived = 10,
}

/// A ChaCha8 generator keyed on `(seed, purpose, index)`. Distinct keys give
/// non-overlapping streams.
pub fn rng_for(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ index);
    rng
}

/// A fresh 64-bit seed derived from `(seed, purpose, index)`.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    rng_for(seed, purpose, index).next_u64()
}
