//! Seed derivation. Every random draw comes from a ChaCha8 generator keyed
//! by the root seed, with one stream per independent unit of work (trial,
//! sample, codeword), so results do not depend on scheduling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Generator for work unit `stream` under root `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent root seed for a sub-experiment `tag`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(tag);
    rng.next_u64()
}

/// Categorical sampler over indices `0..probs.len()`.
#[derive(Debug, Clone)]
pub struct Categorical(WeightedIndex<f64>);

impl Categorical {
    pub fn new(probs: &[f64]) -> Result<Self> {
        WeightedIndex::new(probs)
            .map(Self)
            .map_err(|e| Error::Domain(format!("invalid sampling weights: {e}")))
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.0.sample(rng)
    }

    pub fn fill<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [usize]) {
        out.iter_mut().for_each(|o| *o = self.0.sample(rng));
    }
}

/// Splits `total` units into fixed-size blocks `(stream, len)`; the block
/// layout depends only on `total`.
pub fn blocks(total: u64, block: u64) -> impl Iterator<Item = (u64, u64)> + Clone {
    let n = total.div_ceil(block);
    (0..n).map(move |b| (b, block.min(total - b * block)))
}

/// 95% Wald half-width of a Bernoulli mean.
pub fn wald_half_width(p: f64, n: u64) -> f64 {
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

/// 95% Wilson score half-width of a Bernoulli mean.
pub fn wilson_half_width(p: f64, n: u64) -> f64 {
    let z = 1.96_f64;
    let n = n as f64;
    z / (1.0 + z * z / n) * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream_rng(7, 3), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream_rng(7, 3), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(stream_rng(7, 4), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn block_layout() {
        let v: Vec<_> = blocks(10, 4).collect();
        assert_eq!(v, vec![(0, 4), (1, 4), (2, 2)]);
        assert_eq!(blocks(0, 4).count(), 0);
    }

    #[test]
    fn wilson_is_positive_at_zero() {
        assert!(wilson_half_width(0.0, 100) > 0.0);
        assert!((wald_half_width(0.5, 10_000) - 0.0098).abs() < 1e-12);
    }
}
