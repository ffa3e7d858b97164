//! Seeded random streams.
//!
//! A single run seed fans out into independent ChaCha streams, one per
//! purpose, so toggling one consumer (say dropout) never shifts the draws
//! seen by another (say batch shuffling). Sampling helpers are hand-rolled
//! on top of `next_u64` so results stay stable across dependency upgrades.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purposes occupy the top byte of the 64-bit stream id; the remaining bits
/// carry sub-keys such as (epoch, example) for per-forward dropout streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init = 1,
    Dropout = 2,
    Shuffle = 3,
    Sample = 4,
    Synth = 5,
    Oov = 6,
}

#[derive(Clone, Copy, Debug)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn get(&self, purpose: Purpose) -> ChaCha8Rng {
        self.get_sub(purpose, 0)
    }

    /// Stream for `purpose` with a sub-key, e.g. (epoch << 32) | example.
    pub fn get_sub(&self, purpose: Purpose, sub: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((purpose as u64) << 56) ^ (sub & ((1 << 56) - 1)));
        rng
    }
}

/// Uniform draw in [0, 1) with 53 bits of precision.
pub fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box-Muller; (0, 1] guard keeps the log finite.
pub fn normal(rng: &mut impl RngCore) -> f64 {
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform integer in [0, n). Modulo bias is negligible for the sizes used
/// here (n far below 2^32).
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Pick `k` distinct indices from [0, n) excluding `skip`, fewer if the pool
/// is smaller than `k`.
pub fn sample_excluding(rng: &mut impl RngCore, n: usize, skip: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).filter(|&i| i != skip).collect();
    shuffle(rng, &mut pool);
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_deterministic() {
        let s = Streams::new(7);
        let mut a1 = s.get(Purpose::Init);
        let mut a2 = s.get(Purpose::Init);
        let mut b = s.get(Purpose::Dropout);
        assert_eq!(a1.next_u64(), a2.next_u64());
        let mut a3 = s.get(Purpose::Init);
        assert_ne!(a3.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = Streams::new(1).get(Purpose::Synth);
        for _ in 0..1000 {
            let x = uniform01(&mut rng);
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = Streams::new(2).get(Purpose::Init);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Streams::new(3).get(Purpose::Shuffle);
        let mut v: Vec<usize> = (0..50).collect();
        shuffle(&mut rng, &mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
