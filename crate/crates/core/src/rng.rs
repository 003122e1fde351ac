//! Seeded random streams. Every consumer of randomness draws from its own
//! ChaCha stream so that switching one consumer off never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-item substream, e.g. one per generated sample.
pub fn substream(seed: u64, stream: u64, item: u64) -> Rng {
    let mixed = seed ^ item.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(stream);
    rng
}

/// Stream numbers of the training run's random consumers.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE_SOURCE: u64 = 2;
    pub const SHUFFLE_TARGET: u64 = 3;
    pub const ROTATE_SOURCE: u64 = 4;
    pub const ROTATE_TARGET: u64 = 5;
    pub const DROPOUT_MAIN: u64 = 6;
    pub const DROPOUT_PRETEXT: u64 = 7;
    pub const AUGMENT: u64 = 10;
    pub const EVAL_PRETEXT: u64 = 13;
    pub const EMBED: u64 = 14;
    /// Choice of samples and rotations for saliency figures.
    pub const SALIENCY_PICK: u64 = 15;
    /// Subsampling of the embedded sets.
    pub const EMBED_PICK: u64 = 16;
    /// Rotations of the debug grid.
    pub const DUMP: u64 = 17;
}
