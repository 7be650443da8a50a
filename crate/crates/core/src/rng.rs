//! Seeded random streams. Every consumer of randomness in a run draws from
//! its own ChaCha stream derived from the run's 64-bit seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_ENV: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_REPLAY: u64 = 4;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
