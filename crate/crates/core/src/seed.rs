//! Seed derivation shared by every randomized component.
//!
//! All randomness is drawn from ChaCha8 streams so results are identical
//! across platforms. Child seeds are derived from a parent seed and a list
//! of stream indices with a SplitMix64 finalizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for the stream identified by `path` under `seed`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, path: &[u64]) -> Rng {
    rng(derive(seed, path))
}
