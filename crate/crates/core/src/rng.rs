//! Seeded random streams.
//!
//! Every stochastic operation draws from [`ChaCha8Rng`], a counter-based
//! generator whose 64-bit seed and 64-bit stream id are both explicit. Work
//! that may be evaluated in any order (per ray, per scene) uses its own stream
//! so results do not depend on evaluation order.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Generator for `seed` on stream 0.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for `seed` on an independent stream `stream`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base seed with a list of tags into a new seed (SplitMix64 finaliser).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    for &tag in tags {
        state = splitmix(state ^ splitmix(tag.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
