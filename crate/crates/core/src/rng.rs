//! Seeded random streams.
//!
//! Every random draw in the crate goes through ChaCha8 so that a `(seed, stream)`
//! pair fully determines the output, independent of call order elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers. Distinct purposes draw from distinct streams of the same seed.
pub mod stream {
    pub const NOISE: u64 = 1;
    pub const SCRAMBLE: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const ENCODER_INIT: u64 = 4;
    pub const DECODER_INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const TRAIN_NOISE: u64 = 7;
    pub const PHANTOM: u64 = 8;
    pub const SPLIT: u64 = 9;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A sub-stream of `stream` for one round (e.g. one epoch), so a run can be
/// resumed at any round boundary with the same draws.
pub fn seeded_round(seed: u64, stream: u64, round: u64) -> Rng {
    seeded(seed, stream | ((round + 1) << 8))
}
