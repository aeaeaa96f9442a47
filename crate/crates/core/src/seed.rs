//! Deterministic seed derivation and per-stream generators.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! a 64-bit seed and a 64-bit stream id. Seeds for nested work units
//! (replication, grid cell, column) are derived by hashing, so any cell can be
//! regenerated without touching its neighbours.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream ids reserved for non-column draws. Column `j` uses stream `j`.
pub(crate) const STREAM_FACTORS: u64 = u64::MAX;
pub(crate) const STREAM_OUTCOME_NOISE: u64 = u64::MAX - 1;
pub(crate) const STREAM_SHUFFLE: u64 = u64::MAX - 2;

/// Domain tags mixed into derived seeds.
pub(crate) const TAG_OOS: u64 = 0x6f6f_735f_6472_6177;
pub(crate) const TAG_AUGMENT: u64 = 0x6175_676d_656e_7421;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a path of tags.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `count` standard normal draws from one stream, scaled by `scale`.
pub(crate) fn normal_stream(seed: u64, stream: u64, count: usize, scale: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect()
}

/// Fisher–Yates permutation of `0..n`.
pub(crate) fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = stream_rng(seed, STREAM_SHUFFLE);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
