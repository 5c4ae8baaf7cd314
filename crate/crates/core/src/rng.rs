//! Seeded, splittable random streams.
//!
//! Every consumer that may run concurrently gets its own substream derived
//! from `(seed, index)` alone, so results never depend on scheduling order or
//! on how much of the parent stream was already consumed.

use ndarray::{Array, Dimension, ShapeBuilder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream number `index`. Does not advance `self`.
    pub fn substream(&self, index: u64) -> RandomSource {
        let child = splitmix64(splitmix64(self.seed) ^ splitmix64(index ^ 0xD1B5_4A32_D192_ED03));
        RandomSource::new(child)
    }

    /// Child stream keyed by a two-level index such as `(epoch, example)`.
    pub fn substream2(&self, outer: u64, inner: u64) -> RandomSource {
        self.substream(outer).substream(inner)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        items.shuffle(&mut self.rng);
    }

    /// Array of i.i.d. `N(0, std²)` draws, filled in logical (row-major) order.
    pub fn normal_array<T, Sh, D>(&mut self, shape: Sh, std: f64) -> Result<Array<T, D>>
    where
        T: Scalar,
        Sh: ShapeBuilder<Dim = D>,
        D: Dimension,
    {
        if !(std >= 0.0) || !std.is_finite() {
            return Err(Error::invalid(format!("noise std must be finite and >= 0, got {std}")));
        }
        let mut out = Array::zeros(shape);
        if std > 0.0 {
            for v in out.iter_mut() {
                *v = T::lit(std * self.standard_normal());
            }
        }
        Ok(out)
    }

    /// Array of i.i.d. uniform draws on `[0, 1)`.
    pub fn uniform_array<T, Sh, D>(&mut self, shape: Sh) -> Array<T, D>
    where
        T: Scalar,
        Sh: ShapeBuilder<Dim = D>,
        D: Dimension,
    {
        let mut out = Array::zeros(shape);
        for v in out.iter_mut() {
            *v = T::lit(self.uniform());
        }
        out
    }
}

/// Zero-mean Gaussian noise with standard deviation `std`.
pub fn gaussian_noise<T, Sh, D>(source: &mut RandomSource, shape: Sh, std: f64) -> Result<Array<T, D>>
where
    T: Scalar,
    Sh: ShapeBuilder<Dim = D>,
    D: Dimension,
{
    source.normal_array(shape, std)
}
