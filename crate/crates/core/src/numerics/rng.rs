use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Seeded, platform-independent random source (ChaCha8 stream cipher).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this generator's seed and `stream`.
    /// Does not advance `self`.
    pub fn derive(&self, stream: u64) -> Rng {
        Rng::seeded(derive_seed(self.seed, stream))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Draws index `i` with probability `weights[i] / sum(weights)`.
    pub fn categorical(&mut self, weights: &[f64]) -> Result<usize> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Distribution("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Distribution("weights sum to zero".into()));
        }
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                last_positive = i;
                acc += w;
                if target < acc {
                    return Ok(i);
                }
            }
        }
        // Rounding can leave `target` just above the accumulated sum.
        Ok(last_positive)
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_weights_always_pick_the_mass() {
        let mut rng = Rng::seeded(3);
        for _ in 0..1000 {
            assert_eq!(rng.categorical(&[1.0, 0.0, 0.0]).unwrap(), 0);
            assert_eq!(rng.categorical(&[0.0, 0.0, 2.0]).unwrap(), 2);
        }
    }

    #[test]
    fn all_zero_weights_error() {
        let mut rng = Rng::seeded(0);
        assert!(matches!(rng.categorical(&[0.0, 0.0]), Err(Error::Distribution(_))));
        assert!(rng.categorical(&[]).is_err());
        assert!(rng.categorical(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn fair_coin_frequency_within_three_sigma() {
        // sigma = sqrt(0.25 / 100_000) ~= 0.00158; 3 sigma ~= 0.0047 < 0.006.
        let mut rng = Rng::seeded(17);
        let n = 100_000;
        let zeros = (0..n).filter(|_| rng.categorical(&[1.0, 1.0]).unwrap() == 0).count();
        let f = zeros as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.006, "{f}");
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::seeded(99);
        let mut b = Rng::seeded(99);
        let xa: Vec<f64> = (0..100).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..100).map(|_| b.uniform()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn derived_streams_differ() {
        let base = Rng::seeded(5);
        let mut a = base.derive(1);
        let mut b = base.derive(2);
        assert_ne!(a.uniform(), b.uniform());
        assert_eq!(derive_seed(5, 1), derive_seed(5, 1));
    }
}
