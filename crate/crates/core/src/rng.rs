//! Explicitly seeded, splittable random streams.
//!
//! Every randomized operation in the crate takes a `&mut RandomStream`. Child
//! streams are derived from the parent *key* and an index, never from the
//! parent's current position, so results do not depend on the order in which
//! workers consume their streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Counter-based ChaCha stream identified by a 256-bit key.
#[derive(Clone, Debug)]
pub struct RandomStream {
    key: [u8; 32],
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        // SplitMix64 expansion of the user seed into a full key.
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        Self::from_key(key)
    }

    fn from_key(key: [u8; 32]) -> Self {
        Self {
            key,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent child stream number `index`. Pure in `(self.key, index)`.
    pub fn split(&self, index: u64) -> Self {
        let mut derive = ChaCha8Rng::from_seed(self.key);
        // Stream 0 is what the parent itself draws from; children use the
        // key-derivation stream family above it.
        derive.set_stream(index.wrapping_add(1));
        let mut key = [0u8; 32];
        derive.fill_bytes(&mut key);
        Self::from_key(key)
    }

    /// Child stream keyed by the next 32 bytes of this stream; advances `self`.
    pub fn fork(&mut self) -> Self {
        let mut key = [0u8; 32];
        self.rng.fill_bytes(&mut key);
        Self::from_key(key)
    }

    /// Convenience for nested splits, e.g. `split_path(&[realization, run])`.
    pub fn split_path(&self, path: &[u64]) -> Self {
        path.iter().fold(self.clone(), |s, &i| s.split(i))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RandomStream::from_seed(7);
        let mut b = RandomStream::from_seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_ignores_parent_position() {
        let a = RandomStream::from_seed(11);
        let mut b = RandomStream::from_seed(11);
        for _ in 0..10 {
            b.next_u64();
        }
        assert_eq!(a.split(3).next_u64(), b.split(3).next_u64());
        assert_ne!(a.split(3).next_u64(), a.split(4).next_u64());
        assert_ne!(a.split(0).next_u64(), a.clone().next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut s = RandomStream::from_seed(1);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }
}
