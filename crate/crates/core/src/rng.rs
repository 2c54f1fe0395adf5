//! Seeded pseudo-random numbers.
//!
//! The generator is xoshiro256** with its 256-bit state expanded from a
//! 64-bit seed by SplitMix64. Floats take the top 53 bits of each output
//! (`(x >> 11) · 2⁻⁵³`), and bounded integers use rejection sampling, so a
//! given seed yields the same stream on every platform.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "below() needs a positive bound");
        let bound = bound as u64;
        // largest multiple of `bound` that fits, so the modulo is unbiased
        let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return (x % bound) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Tensor of values drawn uniformly from `[lo, hi)`.
    pub fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Range(format!(
                "uniform range needs lo < hi, got [{lo}, {hi})"
            )));
        }
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let v = lo + (hi - lo) * self.next_f64();
                // rounding in the affine map can land exactly on `hi`
                if v < hi {
                    v
                } else {
                    lo
                }
            })
            .collect();
        Tensor::new(shape.to_vec(), data)
    }

    /// Seed for a child generator; advances this one by one step.
    pub fn fork_seed(&mut self) -> u64 {
        self.next_u64()
    }
}
