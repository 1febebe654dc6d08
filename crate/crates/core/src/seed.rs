//! Deterministic seed derivation.
//!
//! Every stochastic step draws from a ChaCha stream whose seed is mixed from
//! the run seed and a path of integer tags (view, round, image index, ...).
//! Work items therefore never share an RNG, and results do not depend on the
//! order in which parallel workers pick them up.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`. `derive(s, &[a, b]) != derive(s, &[b, a])`.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(base: u64, tags: &[u64]) -> Rng {
    rng(derive(base, tags))
}

/// Stable 64-bit FNV-1a of a string, for folding image ids into seeds.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

// Tag constants so call sites read as a path.
pub const TAG_SCENE: u64 = 1;
pub const TAG_SPLIT: u64 = 2;
pub const TAG_DETECT: u64 = 3;
pub const TAG_FEATURES: u64 = 4;
pub const TAG_ENSEMBLE: u64 = 5;
pub const TAG_NEGATIVES: u64 = 6;
pub const TAG_TUNER: u64 = 7;
