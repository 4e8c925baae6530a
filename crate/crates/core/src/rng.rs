//! Seed splitting.
//!
//! Every random draw in the engine comes from a [`ChaCha8Rng`] seeded by
//! [`stream_seed`], which folds a root seed, a purpose tag and a list of
//! indices through the SplitMix64 finalizer:
//!
//! ```text
//! h = mix(seed ^ TAG_MAGIC) ; h = mix(h ^ tag)
//! for each index k: h = mix(h ^ k)
//! ```
//!
//! `mix` is the SplitMix64 output function (add the golden-ratio increment,
//! then two xor-shift-multiply rounds). There is no global RNG state, so a
//! stream can be recreated anywhere from its coordinates, independent of
//! the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TAG_MAGIC: u64 = 0x524f_5341_5f52_4e47;

/// What a random stream is used for. The discriminant is part of the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Walk = 1,
    EdgeDrop = 2,
    FeatureMask = 3,
    Init = 4,
    Shuffle = 5,
    Perturbation = 6,
    Split = 7,
    Probe = 8,
    Generator = 9,
}

#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = mix64(seed ^ TAG_MAGIC);
    h = mix64(h ^ purpose as u64);
    for &k in indices {
        h = mix64(h ^ k);
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, purpose, indices))
}
