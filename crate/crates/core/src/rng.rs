//! Deterministic per-module random streams.
//!
//! Every run owns one master seed. Each consumer draws from its own ChaCha
//! stream derived from `(seed, label)`, so adding draws in one module never
//! shifts the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type SimRng = ChaCha8Rng;

/// FNV-1a over the label, folded with the seed through splitmix64.
pub fn stream(seed: u64, label: &str) -> SimRng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ h))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Zero-mean Gaussian sample; returns exactly 0 when `sigma` is 0 so
/// noiseless runs do not consume randomness differently from noisy ones.
pub fn gauss(rng: &mut SimRng, sigma: f64) -> f64 {
    let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    if sigma > 0.0 {
        sigma * z
    } else {
        0.0
    }
}
