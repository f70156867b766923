//! Seed derivation. Every random stream (init, dropout, shuffling, fold
//! assignment) is a ChaCha8 generator keyed by the run seed plus a stream id,
//! so no state has to be carried between steps.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; used to mix stream ids into a seed.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: &[u64]) -> u64 {
    stream.iter().fold(mix(seed), |acc, &s| mix(acc ^ mix(s)))
}

pub fn rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}

/// Standard normal sample (Box-Muller).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            let r = Float::sqrt(-2.0 * Float::ln(u1));
            return r * Float::cos(core::f64::consts::TAU * u2);
        }
    }
}
