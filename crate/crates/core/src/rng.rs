//! Seeded, counter-based random substreams.
//!
//! Every random decision in the crate draws from a ChaCha8 stream selected by
//! a base seed and a tuple of integer keys (row index, step, task, episode...).
//! Two computations with the same keys see the same numbers regardless of the
//! order or thread they run in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, keys...)`.
pub fn substream(seed: u64, keys: &[u64]) -> Rng {
    let stream = keys.iter().fold(0x5EED_u64, |acc, &k| mix(acc ^ mix(k)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Domain tags so that different subsystems sharing a seed never collide.
pub(crate) mod domain {
    pub const CORRUPT_ROW: u64 = 1;
    pub const TASKS: u64 = 2;
    pub const DATASET: u64 = 3;
    pub const DISTRACTORS: u64 = 4;
    pub const ENCODER_INIT: u64 = 5;
    pub const ENCODER_BATCH: u64 = 6;
    pub const POLICY_INIT: u64 = 7;
    pub const POLICY_BATCH: u64 = 8;
    pub const POLICY_CORRUPT: u64 = 9;
    pub const EVAL: u64 = 10;
    pub const SYNTHETIC: u64 = 11;
    pub const TEMPLATE: u64 = 12;
    pub const GAP_INJECT: u64 = 13;
}
