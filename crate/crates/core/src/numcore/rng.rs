//! Counter-based random streams.
//!
//! A draw is a pure function of `(seed, stream_id, counter)`, so two streams
//! built from the same triple produce the same sequence on any host and under
//! any thread schedule. Independent streams for ES members, rollout workers or
//! bootstrap replicates are obtained with [`RngStream::derive`].

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            seed,
            stream_id,
            counter: 0,
        }
    }

    /// Child stream identified by `tag`. The parent is not advanced.
    pub fn derive(&self, tag: u64) -> Self {
        let id = mix64(self.stream_id ^ mix64(tag.wrapping_add(GOLDEN)));
        Self {
            seed: self.seed,
            stream_id: id,
            counter: 0,
        }
    }

    /// Child stream for a two-level index such as (generation, member).
    pub fn derive2(&self, a: u64, b: u64) -> Self {
        self.derive(a).derive(b)
    }

    #[inline]
    fn key(&self) -> u64 {
        mix64(mix64(self.seed ^ GOLDEN).wrapping_add(self.stream_id.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
    }

    #[inline]
    fn draw(&mut self) -> u64 {
        let out = mix64(mix64(self.key() ^ self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.draw() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        lo + (self.draw() % span) as usize
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.draw() % n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.draw() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.draw()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.draw().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_fields_give_identical_draws() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let xa: Vec<u64> = (0..1000).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..1000).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_eq!(a, b);
    }

    #[test]
    fn counter_addresses_draws() {
        let mut a = RngStream::new(1, 2);
        let first: Vec<u64> = (0..10).map(|_| a.next_u64()).collect();
        let mut b = RngStream {
            seed: 1,
            stream_id: 2,
            counter: 5,
        };
        assert_eq!(b.next_u64(), first[5]);
    }

    #[test]
    fn derived_streams_differ() {
        let root = RngStream::new(0, 0);
        let mut a = root.derive(1);
        let mut b = root.derive(2);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(root.counter, 0);
    }

    #[test]
    fn uniform_moments() {
        let mut s = RngStream::new(42, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| s.uniform()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn normal_moments() {
        let mut s = RngStream::new(9, 9);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }
}
