//! Losses, the Adam update and the mini-batch training loop.

mod adam;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss_and_gradients, supervised_loss, unlabeled_loss, LossTerms, LossWeights};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_semi_supervised, Dataset};
use crate::diffmath::{squared_l2, Tensor};
use crate::error::{Error, Result};
use crate::gmvae::{GmvaeModel, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the latent prior term.
    pub alpha: f64,
    /// Temperature of the soft minimum in the unlabeled objective; `None`
    /// uses twice the prior variance, i.e. the mixture's own log-density.
    pub softmin_temperature: Option<f64>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub semi_supervised: bool,
    pub labeled_per_class: Option<usize>,
    /// Semi-supervised only: epochs over the labeled subset alone before
    /// unlabeled examples join.
    pub labeled_warmup_epochs: usize,
    /// Architecture; `input_dim` and `num_classes` are taken from the dataset.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            softmin_temperature: None,
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 40,
            seed: 0,
            semi_supervised: false,
            labeled_per_class: None,
            labeled_warmup_epochs: 50,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.softmin_temperature.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return bad("soft-min temperature must be positive".into());
        }
        let a = &self.adam;
        if !(0.0 < a.beta1 && a.beta1 < 1.0 && 0.0 < a.beta2 && a.beta2 < 1.0) {
            return bad(format!("Adam betas must lie in (0, 1), got {} and {}", a.beta1, a.beta2));
        }
        if !(a.learning_rate > 0.0) || !(a.epsilon > 0.0) {
            return bad("learning rate and Adam epsilon must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epoch count must be positive".into());
        }
        if self.labeled_per_class == Some(0) {
            return bad("labeled_per_class must be positive".into());
        }
        Ok(())
    }

    fn weights(&self, prior_variance: f64) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            temperature: self.softmin_temperature.unwrap_or(2.0 * prior_variance),
        }
    }
}

/// Per-epoch means over all examples seen in the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_recon: f64,
    pub mean_latent: f64,
}

/// Statistics of a finished run, used to calibrate the rejection thresholds.
///
/// The per-sample vectors are measured with the final parameters and no
/// latent noise, one entry per training example in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs: Vec<EpochRecord>,
    /// `||f(x) - mu_y||^2` for the true class; nearest mean when unlabeled.
    pub latent_sq_distances: Vec<f64>,
    /// `||x - g(f(x))||^2`.
    pub recon_errors: Vec<f64>,
    /// Whether the labeled objective was used for the sample.
    pub labeled: Vec<bool>,
    pub labeled_steps: u64,
    pub unlabeled_steps: u64,
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(GmvaeModel, TrainStats)> {
    train_with_progress(dataset, config, |_| {})
}

/// Trains a model, calling `progress` after every epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(GmvaeModel, TrainStats)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let working = if config.semi_supervised {
        let per_class = config
            .labeled_per_class
            .ok_or_else(|| Error::Config("semi-supervised training needs labeled_per_class".into()))?;
        split_semi_supervised(dataset, per_class, config.seed)?
    } else {
        if let Some(per_class) = config.labeled_per_class {
            for class in 0..dataset.num_classes() {
                let available = dataset.indices_of_class(class).len();
                if available < per_class {
                    return Err(Error::InsufficientClass {
                        class,
                        available,
                        requested: per_class,
                    });
                }
            }
        }
        dataset.clone()
    };

    let model_cfg = ModelConfig {
        input_dim: dataset.input_dim(),
        num_classes: dataset.num_classes(),
        ..config.model.clone()
    };
    let mut model = GmvaeModel::new(&model_cfg, config.seed)?;
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let weights = config.weights(model.prior().variance());

    let n = working.len();
    let everything: Vec<usize> = (0..n).collect();
    let labeled_only: Vec<usize> = everything.iter().copied().filter(|&i| working.label(i).is_some()).collect();
    let warmup = if config.semi_supervised && !labeled_only.is_empty() {
        config.labeled_warmup_epochs
    } else {
        0
    };
    let mut epochs = Vec::with_capacity(warmup + config.epochs);
    let (mut labeled_steps, mut unlabeled_steps) = (0u64, 0u64);

    for epoch in 0..warmup + config.epochs {
        let mut order = if epoch < warmup { labeled_only.clone() } else { everything.clone() };
        order.shuffle(&mut rng);
        let seen = order.len();
        let (mut sum_loss, mut sum_recon, mut sum_lat) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let noise: Vec<Tensor> = batch.iter().map(|_| model.noise().draw(&mut rng)).collect();
            let current = &model;
            let results: Vec<(LossTerms, Vec<Tensor>)> = batch
                .par_iter()
                .zip(noise.par_iter())
                .map(|(&i, eps)| loss_and_gradients(current, working.image(i), working.label(i), eps, weights))
                .collect::<Result<_>>()?;

            let mut total: Option<Vec<Tensor>> = None;
            for (terms, grads) in results {
                sum_loss += terms.total;
                sum_recon += terms.reconstruction;
                sum_lat += terms.latent;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            for &i in batch {
                if working.label(i).is_some() {
                    labeled_steps += 1;
                } else {
                    unlabeled_steps += 1;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mean: Vec<Tensor> = total.expect("batches are nonempty").iter().map(|g| g.scale(scale)).collect();
            adam_step(model.params_mut(), &mean, &mut adam, &config.adam)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_loss: sum_loss / seen as f64,
            mean_recon: sum_recon / seen as f64,
            mean_latent: sum_lat / seen as f64,
        };
        progress(&record);
        epochs.push(record);
    }

    let per_sample: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let x = dataset.image(i);
            let z = model.encode(x)?;
            let recon = squared_l2(x, &model.decode(&z)?)?;
            let lat = match dataset.label(i) {
                Some(y) => squared_l2(&z, &model.prior().mean_tensor(y))?,
                None => model
                    .prior()
                    .sq_distances(z.data())
                    .into_iter()
                    .fold(f64::INFINITY, f64::min),
            };
            Ok((lat, recon))
        })
        .collect::<Result<_>>()?;

    let stats = TrainStats {
        epochs,
        latent_sq_distances: per_sample.iter().map(|p| p.0).collect(),
        recon_errors: per_sample.iter().map(|p| p.1).collect(),
        labeled: working.labels().iter().map(Option::is_some).collect(),
        labeled_steps,
        unlabeled_steps,
    };
    Ok((model, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            model: ModelConfig {
                encoder_hidden: vec![8],
                decoder_hidden: vec![8],
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Dataset {
        gen_synthetic(&SyntheticSpec {
            num_classes: 2,
            per_class: 10,
            side: 4,
            noise: 0.05,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn stats_cover_every_sample() {
        let d = tiny_data();
        let (_, stats) = train(&d, &tiny_config()).unwrap();
        assert_eq!(stats.recon_errors.len(), d.len());
        assert_eq!(stats.latent_sq_distances.len(), d.len());
        assert_eq!(stats.epochs.len(), 3);
        assert_eq!(stats.labeled_steps, 3 * d.len() as u64);
        assert_eq!(stats.unlabeled_steps, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let d = tiny_data();
        let (m1, s1) = train(&d, &tiny_config()).unwrap();
        let (m2, s2) = train(&d, &tiny_config()).unwrap();
        assert_eq!(m1.to_checkpoint_bytes(), m2.to_checkpoint_bytes());
        assert_eq!(s1, s2);
    }

    #[test]
    fn semi_supervised_uses_both_objectives() {
        let d = tiny_data();
        let cfg = TrainConfig {
            semi_supervised: true,
            labeled_per_class: Some(2),
            labeled_warmup_epochs: 0,
            ..tiny_config()
        };
        let (_, stats) = train(&d, &cfg).unwrap();
        assert_eq!(stats.labeled_steps, 3 * 4);
        assert_eq!(stats.unlabeled_steps, 3 * 16);
        assert_eq!(stats.labeled.iter().filter(|&&b| b).count(), 4);
    }

    #[test]
    fn warmup_sees_only_labeled_examples() {
        let d = tiny_data();
        let cfg = TrainConfig {
            semi_supervised: true,
            labeled_per_class: Some(2),
            labeled_warmup_epochs: 5,
            ..tiny_config()
        };
        let (_, stats) = train(&d, &cfg).unwrap();
        assert_eq!(stats.epochs.len(), 8);
        assert_eq!(stats.labeled_steps, 8 * 4);
        assert_eq!(stats.unlabeled_steps, 3 * 16);
        // supervised runs ignore the warm-up
        let (_, stats) = train(&d, &TrainConfig { labeled_warmup_epochs: 5, ..tiny_config() }).unwrap();
        assert_eq!(stats.epochs.len(), 3);
    }

    #[test]
    fn errors_are_reported() {
        let d = tiny_data();
        let cfg = TrainConfig {
            labeled_per_class: Some(11),
            ..tiny_config()
        };
        assert!(matches!(train(&d, &cfg), Err(Error::InsufficientClass { .. })));
        let cfg = TrainConfig {
            semi_supervised: true,
            labeled_per_class: Some(11),
            ..tiny_config()
        };
        assert!(matches!(train(&d, &cfg), Err(Error::InsufficientClass { .. })));
        let cfg = TrainConfig {
            alpha: 0.0,
            ..tiny_config()
        };
        assert!(matches!(train(&d, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn separable_toy_set_is_learned() {
        // two 4-pixel classes: left pair lit vs right pair lit
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let j = (i % 5) as f64 * 0.02;
            if i % 2 == 0 {
                images.push(Tensor::vector(vec![0.9 - j, 0.9, 0.1 + j, 0.1]));
                labels.push(Some(0));
            } else {
                images.push(Tensor::vector(vec![0.1, 0.1 + j, 0.9, 0.9 - j]));
                labels.push(Some(1));
            }
        }
        let d = Dataset::new(images, labels, 2, 2, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            model: ModelConfig {
                encoder_hidden: vec![8],
                decoder_hidden: vec![8],
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let (m, _) = train(&d, &cfg).unwrap();
        for (x, y) in d.images().iter().zip(d.labels()) {
            assert_eq!(Some(crate::selector::classify(&m, x).unwrap()), *y);
        }
    }
}
