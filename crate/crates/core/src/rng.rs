//! Deterministic RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded by
//! mixing a master seed with a path of stream indices, so results do not
//! depend on scheduling order when cells run concurrently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(master), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn stream_rng(master: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}
