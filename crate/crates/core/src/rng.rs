//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`; independent sub-streams (training data,
//! noise, Monte Carlo runs) use distinct ChaCha stream ids on the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
