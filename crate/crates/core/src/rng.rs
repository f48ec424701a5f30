//! Seeded random streams.
//!
//! Every randomized routine takes an explicit stream. Work that may run in
//! parallel derives one independent substream per task from a base seed, so
//! results do not depend on scheduling order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type Stream = ChaCha20Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent substream `id` of the generator seeded with `seed`.
pub fn substream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a fresh seed from a parent stream.
pub fn fork_seed(rng: &mut dyn RngCore) -> u64 {
    rng.next_u64()
}
