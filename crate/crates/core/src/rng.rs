//! Portable pseudo-random numbers.
//!
//! Every stochastic step in the crate draws from xoshiro256** whose 256-bit
//! state is filled by four successive SplitMix64 outputs of the 64-bit seed
//! (the reference seeding of both algorithms). Derived quantities use only the
//! raw `u64` stream so another language can reproduce them bit-for-bit:
//!
//! * `unit()`   = `(next_u64 >> 11) * 2^-53`, a float in `[0, 1)`.
//! * `below(n)` = `(next_u64 as u128 * n) >> 64`, an integer in `[0, n)`.
//! * `range(a, b)` = `a + (b - a) * unit()`.
//!
//! Per-pixel noise uses a counter-based stream instead: SplitMix64 seeded with
//! [`mix_key`] of (seed, frame, pixel), so pixels can be processed in any order.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

pub struct Rng(Xoshiro256StarStar);

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = SplitMix64::seed_from_u64(seed);
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&sm.next_u64().to_le_bytes());
        }
        Rng(Xoshiro256StarStar::from_seed(bytes))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

/// Counter-based stream keyed by a tuple of integers.
pub struct KeyedStream(SplitMix64);

impl KeyedStream {
    pub fn new(key: u64) -> Self {
        KeyedStream(SplitMix64::seed_from_u64(key))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// Folds `(seed, a, b)` into one key with the SplitMix64 finalizer.
pub fn mix_key(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed;
    for x in [a, b] {
        h = finalize(h ^ finalize(x.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
