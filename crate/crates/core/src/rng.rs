//! Deterministic random numbers.
//!
//! All randomness in the crate comes from [`Rng`], a thin wrapper around
//! ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded with
//! `rand_core::SeedableRng::seed_from_u64`. Both the stream cipher and the
//! seed expansion are value-stable across platforms and crate patch releases,
//! so a seed reproduces the same bits everywhere. The float conversions layered
//! on top are fixed here:
//!
//! * `uniform01`: `(next_u32() >> 8) as f32 * 2^-24`, i.e. 24 random mantissa
//!   bits in `[0, 1)`.
//! * `normal`: Box-Muller on two `f64` uniforms built from 53-bit draws,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`; the sine branch is discarded.
//! * `below(n)`: multiply-shift, `(next_u64() as u128 * n) >> 64`.
//! * `shuffle`: Fisher-Yates from the last index down, using `below(i + 1)`.
//!
//! Independent streams are derived with [`derive_seed`], a SplitMix64 finalizer
//! over the parent seed and a stream tag.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform01(&mut self) -> f32 {
        (self.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.uniform01()
    }

    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self, mean: f32, std: f32) -> f32 {
        let u1 = self.uniform_f64();
        let u2 = self.uniform_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let z = r * (2.0 * std::f64::consts::PI * u2).cos();
        mean + std * z as f32
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Mixes a parent seed with a stream tag into an independent child seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
