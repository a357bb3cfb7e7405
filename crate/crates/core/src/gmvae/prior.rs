use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffmath::{sq_dist, Tensor};
use crate::error::{Error, Result};

/// Gaussian mixture over the latent space: one isotropic component per class,
/// centred on the (zero-padded) one-hot code of the class, equal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior {
    num_classes: usize,
    latent_dim: usize,
    variance: f64,
    /// `[k, d]`, row `c` is the mean of class `c`.
    means: Tensor,
}

impl MixturePrior {
    pub fn new(num_classes: usize, latent_dim: usize, variance: f64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("at least one class is required".into()));
        }
        if latent_dim < num_classes {
            return Err(Error::Config(format!(
                "latent dimension {latent_dim} is smaller than the class count {num_classes}"
            )));
        }
        check_variance("prior variance", variance)?;
        let mut means = Tensor::zeros(&[num_classes, latent_dim]);
        for c in 0..num_classes {
            means.data_mut()[c * latent_dim + c] = 1.0;
        }
        Ok(MixturePrior {
            num_classes,
            latent_dim,
            variance,
            means,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Per-dimension variance of every component.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn means(&self) -> &Tensor {
        &self.means
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        self.means.row(class)
    }

    pub fn mean_tensor(&self, class: usize) -> Tensor {
        Tensor::vector(self.mean(class).to_vec())
    }

    pub fn class_weights(&self) -> Vec<f64> {
        vec![1.0 / self.num_classes as f64; self.num_classes]
    }

    /// Squared Euclidean distance from `z` to every class mean.
    pub fn sq_distances(&self, z: &[f64]) -> Vec<f64> {
        (0..self.num_classes).map(|c| sq_dist(z, self.mean(c))).collect()
    }

    pub fn log_density(&self, z: &Tensor) -> Result<f64> {
        mixture_log_density(self, self.variance, z)
    }
}

/// `log sum_c (1/k) N(z; mu_c, variance * I)`, evaluated with log-sum-exp.
pub fn mixture_log_density(prior: &MixturePrior, variance: f64, z: &Tensor) -> Result<f64> {
    if z.shape() != [prior.latent_dim] {
        return Err(Error::shape("mixture_log_density", &[prior.latent_dim], z.shape()));
    }
    check_variance("variance", variance)?;
    let d = prior.latent_dim as f64;
    let k = prior.num_classes as f64;
    let log_norm = -0.5 * d * (2.0 * PI * variance).ln();
    let exponents: Vec<f64> = prior
        .sq_distances(z.data())
        .into_iter()
        .map(|s| -0.5 * s / variance)
        .collect();
    let hi = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = hi + exponents.iter().map(|e| (e - hi).exp()).sum::<f64>().ln();
    Ok(log_norm - k.ln() + lse)
}

/// Isotropic Gaussian noise added to encoder means. The variance is fixed at
/// construction, so the entropy of the sampling distribution never depends on
/// the input.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    variance: f64,
    dim: usize,
}

impl NoiseSpec {
    pub const DEFAULT_VARIANCE: f64 = 1.0 / 3000.0;

    /// Zero variance is accepted and yields deterministic sampling.
    pub fn new(variance: f64, dim: usize) -> Result<Self> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::Config(format!("noise variance must be >= 0, got {variance}")));
        }
        Ok(NoiseSpec { variance, dim })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(d/2) log(2 pi e sigma^2)`.
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim as f64 * (2.0 * PI * std::f64::consts::E * self.variance).ln()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let sd = self.variance.sqrt();
        Tensor::vector(
            (0..self.dim)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(rng);
                    sd * n
                })
                .collect(),
        )
    }
}

/// `z_mean + eps` with `eps ~ N(0, sigma^2 I)` drawn from a generator seeded by `seed`.
pub fn sample_latent(z_mean: &Tensor, noise: &NoiseSpec, seed: u64) -> Result<Tensor> {
    if z_mean.shape() != [noise.dim] {
        return Err(Error::shape("sample_latent", z_mean.shape(), &[noise.dim]));
    }
    if noise.variance == 0.0 {
        return Ok(z_mean.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    z_mean.add(&noise.draw(&mut rng))
}

fn check_variance(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive, got {v}")))
    }
}
