//! Seeded random stream used by every sampling path.
//!
//! The generator is xoshiro256++ seeded through SplitMix64 (the reference
//! seeding procedure of the xoshiro authors). All derived draws are defined
//! here in terms of `next_u64` so that an implementation in another language
//! reproduces episode lists and synthetic datasets bit for bit:
//!
//! - `below(n)`: rejection sampling, reject `x < (2^64 - n) mod n`, return `x mod n`.
//! - `unit_f64()`: `(x >> 11) * 2^-53`, uniform in `[0, 1)`.
//! - `normal()`: Box-Muller with `u1 = 1 - unit_f64()`, `u2 = unit_f64()`,
//!   returning `sqrt(-2 ln u1) * cos(2 pi u2)`; the sine branch is discarded.
//! - `partial_shuffle(k, items)`: forward Fisher-Yates, position `i` swapped
//!   with `i + below(len - i)` for `i in 0..k`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedStream {
    inner: Xoshiro256PlusPlus,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-a, a)`.
    pub fn symmetric(&mut self, a: f64) -> f64 {
        a * (2.0 * self.unit_f64() - 1.0)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit_f64();
        let u2 = self.unit_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Moves a uniformly drawn `k`-subset of `items` (in draw order) to the front.
    pub fn partial_shuffle<T>(&mut self, k: usize, items: &mut [T]) {
        let len = items.len();
        for i in 0..k.min(len) {
            let j = i + self.below((len - i) as u64) as usize;
            items.swap(i, j);
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let len = items.len();
        self.partial_shuffle(len, items);
    }

    /// Vector drawn uniformly on the unit sphere of dimension `dim`.
    pub fn unit_sphere(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}
