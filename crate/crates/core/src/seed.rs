//! Named random streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent sub-streams of one seed. Adding a consumer of one stream
/// never perturbs the draws of another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Universe = 1,
    Init = 2,
    Sampling = 3,
    Evaluation = 4,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
