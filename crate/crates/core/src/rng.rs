//! Counter-based randomness.
//!
//! Every random variable is addressed by `(seed, tag, keys)`, hashed with the
//! splitmix64 finalizer. The value of a variable therefore does not depend on
//! the order in which it is requested, and variables with different tags are
//! independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags give independent families of variables.
pub mod tag {
    pub const SET: u64 = 0x01;
    pub const XI: u64 = 0x02;
    pub const GATE: u64 = 0x03;
    pub const COUPLE: u64 = 0x04;
    pub const NET_W: u64 = 0x05;
    pub const NET_U: u64 = 0x06;
    pub const CENSOR: u64 = 0x07;
    pub const MERGE: u64 = 0x08;
    pub const CHAIN: u64 = 0x09;
    pub const REPLICA: u64 = 0x0a;
    pub const WITNESS: u64 = 0x0b;
    pub const CORRECTION: u64 = 0x0c;
    pub const PAIR_GATE0: u64 = 0x0d;
    pub const SEQ: u64 = 0x0e;
}

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn hash(seed: u64, tag: u64, keys: &[i64]) -> u64 {
    let mut h = mix(seed ^ mix(tag.wrapping_mul(0x2545_f491_4f6c_dd1d)));
    for &k in keys {
        h = mix(h ^ (k as u64));
    }
    h
}

/// A uniform in `[0, 1)` with 53 random bits.
pub fn uniform(seed: u64, tag: u64, keys: &[i64]) -> f64 {
    (hash(seed, tag, keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn bernoulli(p: f64, seed: u64, tag: u64, keys: &[i64]) -> bool {
    uniform(seed, tag, keys) < p
}

/// A sequential generator for variables that need many draws.
pub fn stream(seed: u64, tag: u64, keys: &[i64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash(seed, tag, keys))
}

/// Seed of replica `r` derived from a master seed.
pub fn replica_seed(seed: u64, r: u64) -> u64 {
    hash(seed, tag::REPLICA, &[r as i64])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_tag_separated() {
        assert_eq!(uniform(7, tag::SET, &[1, 2]), uniform(7, tag::SET, &[1, 2]));
        assert_ne!(uniform(7, tag::SET, &[1, 2]), uniform(7, tag::XI, &[1, 2]));
        assert_ne!(uniform(7, tag::SET, &[1, 2]), uniform(7, tag::SET, &[2, 1]));
    }

    #[test]
    fn uniform_mean() {
        let n = 200_000;
        let m: f64 = (0..n).map(|i| uniform(3, tag::SET, &[i])).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 4.0 * (1.0f64 / 12.0 / n as f64).sqrt());
    }
}
