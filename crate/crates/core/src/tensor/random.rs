use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Gaussian restricted to `|v - mean| <= 2 std`, by rejection.
    TruncatedGaussian {
        mean: f64,
        std: f64,
    },
}

impl Distribution {
    pub fn std(&self) -> f64 {
        match *self {
            Distribution::Gaussian { std, .. } | Distribution::TruncatedGaussian { std, .. } => std,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Gaussian { mean, .. } | Distribution::TruncatedGaussian { mean, .. } => mean,
        }
    }
}

/// Seed plus distribution. Identical specs give bit-identical streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RngSpec {
    pub seed: u64,
    pub distribution: Distribution,
}

impl RngSpec {
    pub fn gaussian(seed: u64, mean: f64, std: f64) -> Self {
        RngSpec {
            seed,
            distribution: Distribution::Gaussian { mean, std },
        }
    }

    pub fn truncated(seed: u64, mean: f64, std: f64) -> Self {
        RngSpec {
            seed,
            distribution: Distribution::TruncatedGaussian { mean, std },
        }
    }

    /// Same distribution, seed replaced.
    pub fn with_seed(self, seed: u64) -> Self {
        RngSpec { seed, ..self }
    }

    /// Same distribution on an independent stream keyed by `stream`.
    pub fn derive(self, stream: u64) -> Self {
        self.with_seed(mix_seed(self.seed, stream))
    }

    pub fn sampler(&self) -> Result<Sampler> {
        let std = self.distribution.std();
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "standard deviation must be positive, got {std}"
            )));
        }
        Ok(Sampler {
            rng: seeded_rng(self.seed),
            distribution: self.distribution,
        })
    }
}

/// Draw a tensor of i.i.d. samples.
pub fn sample(spec: &RngSpec, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
    spec.sampler()?.tensor(shape)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer over `seed ^ stream`-ish input; stable across platforms.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A running sample stream.
pub struct Sampler {
    rng: ChaCha8Rng,
    distribution: Distribution,
}

impl Sampler {
    pub fn next_value(&mut self) -> f64 {
        match self.distribution {
            Distribution::Gaussian { mean, std } => {
                let z: f64 = self.rng.sample(StandardNormal);
                mean + std * z
            }
            Distribution::TruncatedGaussian { mean, std } => loop {
                let z: f64 = self.rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break mean + std * z;
                }
            },
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_value();
        }
    }

    pub fn tensor(&mut self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let mut t = Tensor::zeros(shape)?;
        self.fill(t.data_mut());
        Ok(t)
    }
}
