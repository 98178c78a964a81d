//! Seeded, splittable random streams.
//!
//! Each [`Rng`] is a ChaCha8 keystream identified by `(seed, stream)`. Child
//! streams are derived from the parent's identity only, never from how many
//! values the parent has drawn, so work can be handed out to substreams in
//! any order and still reproduce bit-for-bit.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream `id`. Does not consume from `self`.
    pub fn split(&self, id: u64) -> Rng {
        Rng::with_stream(splitmix(self.seed ^ splitmix(self.stream)), id)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// I.i.d. samples from `U[lo, hi)`.
pub fn rng_uniform<F: Real>(rng: &mut Rng, lo: f64, hi: f64, shape: &[usize]) -> Result<Tensor<F>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "uniform range [{lo}, {hi}) is empty"
        )));
    }
    Ok(Tensor::from_fn(shape, |_| F::of(rng.uniform(lo, hi))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let base = Rng::new(0);
        let a: Tensor<f32> = rng_uniform(&mut base.clone(), 0.0, 1.0, &[64]).unwrap();
        let b: Tensor<f32> = rng_uniform(&mut base.clone(), 0.0, 1.0, &[64]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_mean_matches_law_of_large_numbers() {
        let mut rng = Rng::new(1);
        let t: Tensor<f64> = rng_uniform(&mut rng, 0.0, 1.0, &[100_000]).unwrap();
        let mean = t.sum() / 1e5;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn degenerate_range_is_rejected() {
        let mut rng = Rng::new(0);
        assert!(rng_uniform::<f64>(&mut rng, 1.0, 1.0, &[2]).is_err());
        assert!(rng_uniform::<f64>(&mut rng, 2.0, 1.0, &[2]).is_err());
    }

    #[test]
    fn split_ignores_parent_consumption() {
        let mut parent = Rng::new(9);
        let before = parent.split(3).unit();
        for _ in 0..10 {
            parent.unit();
        }
        assert_eq!(before, parent.split(3).unit());
        assert_ne!(parent.split(3).unit(), parent.split(4).unit());
    }
}
