//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream derived from a
//! master seed plus a stream id, so results do not depend on how work is
//! split across episodes or workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PopRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> PopRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> PopRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit mix used to derive child seeds (splitmix64 finalizer).
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
