//! Seeded randomness shared by sampling, exemplar selection and bootstrap.
//!
//! The generator is SplitMix64 with its state initialised to the seed. Bounded
//! draws use rejection sampling: with `t = 2^64 mod m`, draw `x` until
//! `x >= t` and return `x mod m`. Samples without replacement are a partial
//! Fisher-Yates shuffle: for `i` in `0..n`, swap position `i` with
//! `i + below(len - i)`, then keep the first `n` positions.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: SplitMix64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..m`. `m` must be positive.
    pub fn below(&mut self, m: u64) -> u64 {
        assert!(m > 0, "below(0)");
        let threshold = m.wrapping_neg() % m;
        loop {
            let x = self.inner.next_u64();
            if x >= threshold {
                return x % m;
            }
        }
    }

    /// Uniform index in `0..len`.
    pub fn index(&mut self, len: usize) -> usize {
        self.below(len as u64) as usize
    }

    /// Draws `n` distinct indices from `0..len` in draw order.
    pub fn choose_indices(&mut self, len: usize, n: usize) -> Vec<usize> {
        assert!(n <= len, "cannot choose {n} of {len}");
        let mut pool: Vec<usize> = (0..len).collect();
        for i in 0..n {
            let j = i + self.index(len - i);
            pool.swap(i, j);
        }
        pool.truncate(n);
        pool
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_stream() {
        // First two outputs for seed 0, computed by an independent script.
        let mut rng = SeededRng::new(0);
        assert_eq!(rng.next_u64(), 16294208416658607535);
        assert_eq!(rng.next_u64(), 7960286522194355700);
    }

    #[test]
    fn choose_indices_is_distinct_and_deterministic() {
        let a = SeededRng::new(9).choose_indices(20, 7);
        let b = SeededRng::new(9).choose_indices(20, 7);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 7);
        assert!(a.iter().all(|&i| i < 20));
    }

    #[test]
    fn below_one_is_zero() {
        let mut rng = SeededRng::new(3);
        for _ in 0..10 {
            assert_eq!(rng.below(1), 0);
        }
    }
}
