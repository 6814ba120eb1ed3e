//! Seeded random streams, one per purpose.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so enabling or disabling one consumer (e.g. the attack's
//! random start) never shifts the draws seen by another (e.g. the shuffle).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    DropMask = 3,
    AttackInit = 4,
    Data = 5,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Stream for a sub-task (e.g. one sample of an attack sweep).
pub fn substream(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mixed = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    stream(mixed, purpose)
}
