//! Seed fan-out.
//!
//! Every command takes one `--seed`. Independent consumers get their own
//! ChaCha8 keystream: the generator is keyed by the seed and the 64-bit
//! ChaCha stream id is set to a fixed per-consumer counter. Streams never
//! overlap, and adding a consumer does not perturb the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used inside the crate. Sub-streams (per tree, per fold, ...)
/// are formed with [`substream`].
pub mod stream {
    pub const LABELS: u64 = 1;
    pub const SYNTH: u64 = 2;
    pub const FOREST: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const FOLDS: u64 = 7;
    pub const NULL_LABELS: u64 = 8;
    pub const GRADCHECK: u64 = 9;
}

/// Combine a base stream id with an index, e.g. one stream per tree.
pub fn substream(base: u64, index: u64) -> u64 {
    (base << 32) | (index & 0xffff_ffff)
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
