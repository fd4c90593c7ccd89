//! Seeded random streams with named forks.
//!
//! A [`SeededRng`] is a ChaCha8 stream. Forks are derived from the root seed
//! and a purpose label only, never from the parent's position, so drawing
//! from one fork can't shift another.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a named purpose ("init", "shuffle", "noise", ...).
    pub fn fork(&self, purpose: &str) -> SeededRng {
        SeededRng::new(splitmix64(self.seed ^ splitmix64(fnv1a(purpose))))
    }

    /// Independent stream for a purpose and an index, e.g. one per epoch.
    pub fn fork_indexed(&self, purpose: &str, index: u64) -> SeededRng {
        SeededRng::new(splitmix64(self.fork(purpose).seed ^ splitmix64(index)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Independent Normal(mean, std[i]²) draws, one per element of `std`.
pub fn sample_gaussian(
    rng: &mut SeededRng,
    shape: &[usize],
    mean: f64,
    std: &Tensor,
) -> Result<Tensor> {
    if std.shape() != shape {
        return Err(Error::shape("sample_gaussian", shape, std.shape()));
    }
    if let Some(bad) = std.data().iter().find(|s| s.is_nan() || **s < 0.0) {
        return Err(Error::Argument(format!(
            "standard deviation must be >= 0, got {bad}"
        )));
    }
    let data = std
        .data()
        .iter()
        .map(|&s| mean + s * rng.standard_normal())
        .collect();
    Tensor::new(shape, data)
}
