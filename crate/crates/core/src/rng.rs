//! Seeded randomness.
//!
//! All stochastic operations take a [`SeedRng`] by argument; there is no
//! global generator. The backing stream is counter-based (ChaCha8), so a
//! generator can spawn independent child streams deterministically via
//! [`SeedRng::child`] without consuming its own state.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::real::Real;

/// Deterministic random generator owned by exactly one caller at a time.
#[derive(Debug, Clone)]
pub struct SeedRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream keyed by `tag`.
    ///
    /// Children with distinct tags never overlap, and deriving a child does
    /// not advance the parent.
    pub fn child(&self, tag: u64) -> SeedRng {
        SeedRng::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x9e37_79b9))))
    }

    /// [`SeedRng::child`] keyed by a human-readable label.
    pub fn child_named(&self, tag: &str) -> SeedRng {
        self.child(fnv1a64(tag.as_bytes()))
    }

    /// Raw 64-bit draw (advances the stream).
    pub fn raw_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Standard-normal draw.
    pub fn normal<R: Real>(&mut self) -> R {
        // Sample in f64 so f32/f64 instantiations share one stream layout.
        let v: f64 = StandardNormal.sample(&mut self.inner);
        R::of(v)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform<R: Real>(&mut self, lo: R, hi: R) -> R {
        let u = self.unit();
        lo + (hi - lo) * R::of(u)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        // Rejection-free modulo is fine here: n is tiny relative to 2^64.
        (self.inner.next_u64() % n as u64) as usize
    }

    /// Sample an index from normalized `weights` by inverse CDF.
    ///
    /// Ties collapse toward the lowest index: the first bucket whose
    /// cumulative mass covers the draw wins.
    pub fn categorical<R: Real>(&mut self, weights: &[R]) -> usize {
        let u = R::of(self.unit());
        let mut cum = R::zero();
        for (i, &w) in weights.iter().enumerate() {
            cum = cum + w;
            if u < cum {
                return i;
            }
        }
        weights.len() - 1
    }
}

impl RngCore for SeedRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeedRng::new(7);
        let mut b = SeedRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn children_are_independent_of_parent_consumption() {
        let parent = SeedRng::new(42);
        let mut c1 = parent.child(3);
        let mut parent2 = SeedRng::new(42);
        parent2.next_u64();
        let mut c2 = parent2.child(3);
        assert_eq!(c1.next_u64(), c2.next_u64());
    }

    #[test]
    fn distinct_tags_distinct_streams() {
        let parent = SeedRng::new(42);
        assert_ne!(parent.child(1).next_u64(), parent.child(2).next_u64());
    }

    #[test]
    fn categorical_prefers_lowest_index_on_one_hot() {
        let mut rng = SeedRng::new(0);
        for _ in 0..50 {
            assert_eq!(rng.categorical(&[1.0f64, 0.0, 0.0]), 0);
        }
    }
}
