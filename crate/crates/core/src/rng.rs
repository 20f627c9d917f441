//! Seeded random streams.
//!
//! All randomness is drawn from ChaCha8 generators. Independent sub-tasks
//! (bootstrap replicate `i`, placebo run `j`, ...) get their own stream of a
//! single seed so results are identical regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `stream` of `seed`. Streams of one seed never overlap.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
