//! Seeded random streams built on xorshift128.
//!
//! Every draw is derived from `next_u64` with fixed formulas so that a given
//! `(seed, stream)` pair yields the same values on every platform:
//!
//! - uniform `[0, 1)`: top 53 bits of `next_u64` times `2^-53`
//! - standard normal: Box-Muller on two uniforms (cosine branch only)
//! - bounded index: rejection sampling on the top bits
//! - shuffles: Fisher-Yates from the last element down

use rand_core::{RngCore, SeedableRng};
use rand_xorshift::XorShiftRng;

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[derive(Debug, Clone)]
pub struct Stream {
    inner: XorShiftRng,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { inner: XorShiftRng::seed_from_u64(seed) }
    }

    pub fn derived(seed: u64, stream: u64) -> Self {
        Self::new(derive_seed(seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = (0..5).map({ let mut s = Stream::derived(7, 3); move |_| s.next_u64() }).collect();
        let b: Vec<u64> = (0..5).map({ let mut s = Stream::derived(7, 3); move |_| s.next_u64() }).collect();
        let c: Vec<u64> = (0..5).map({ let mut s = Stream::derived(7, 4); move |_| s.next_u64() }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_and_normal_moments() {
        let mut s = Stream::new(1);
        let n = 20_000;
        let us: Vec<f64> = (0..n).map(|_| s.uniform()).collect();
        assert!(us.iter().all(|u| (0.0..1.0).contains(u)));
        let mean = us.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
        let zs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let m = zs.iter().sum::<f64>() / n as f64;
        let var = zs.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / n as f64;
        assert!(m.abs() < 0.03, "mean {m}");
        assert!((var - 1.0).abs() < 0.04, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut s = Stream::new(9);
        let mut v: Vec<usize> = (0..50).collect();
        s.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
        for _ in 0..1000 {
            assert!(s.below(3) < 3);
        }
    }
}
