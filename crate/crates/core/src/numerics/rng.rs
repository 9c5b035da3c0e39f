//! Seeded random source.
//!
//! `SeedRng` wraps ChaCha8 (`rand_chacha::ChaCha8Rng`), whose output stream is
//! specified by the ChaCha algorithm and identical on every platform. Uniform
//! draws use the top 53 bits of a `u64`; normal draws use the Box-Muller
//! transform. Neither depends on `rand` distribution internals, so a fixed
//! seed reproduces the same numbers bit-for-bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

pub struct SeedRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `[0, n)` by rejection sampling.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
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

    pub fn uniform_tensor(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.uniform_range(-bound, bound)).collect();
        Tensor::new(shape, data).expect("uniform_tensor shape")
    }

    pub fn normal_tensor(&mut self, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| scale * self.normal()).collect();
        Tensor::new(shape, data).expect("normal_tensor shape")
    }
}
