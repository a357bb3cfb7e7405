use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prior::{MixturePrior, NoiseSpec};
use crate::diffmath::{squared_l2, Activation, Mlp, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Shape and noise settings for a freshly initialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    /// Defaults to `num_classes` when absent.
    pub latent_dim: Option<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub noise_variance: f64,
    /// Defaults to `noise_variance` when absent.
    pub prior_variance: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 256,
            num_classes: 4,
            latent_dim: None,
            encoder_hidden: vec![128, 64],
            decoder_hidden: vec![64, 128],
            noise_variance: NoiseSpec::DEFAULT_VARIANCE,
            prior_variance: None,
        }
    }
}

impl ModelConfig {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim.unwrap_or(self.num_classes)
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_variance.unwrap_or(self.noise_variance)
    }
}

/// Encoder `f`, decoder `g`, latent mixture prior and the fixed encoder noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GmvaeModel {
    encoder: Mlp,
    decoder: Mlp,
    prior: MixturePrior,
    noise: NoiseSpec,
}

impl GmvaeModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let d = config.latent_dim();
        let prior = MixturePrior::new(config.num_classes, d, config.prior_variance())?;
        let noise = NoiseSpec::new(config.noise_variance, d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut enc_widths = vec![config.input_dim];
        enc_widths.extend(&config.encoder_hidden);
        enc_widths.push(d);
        let encoder = Mlp::init(&enc_widths, Activation::Relu, Activation::Identity, &mut rng)?;

        let mut dec_widths = vec![d];
        dec_widths.extend(&config.decoder_hidden);
        dec_widths.push(config.input_dim);
        let decoder = Mlp::init(&dec_widths, Activation::Relu, Activation::Sigmoid, &mut rng)?;

        GmvaeModel::from_parts(encoder, decoder, prior, noise)
    }

    /// Assembles a model from explicit parts, checking that the widths agree.
    pub fn from_parts(encoder: Mlp, decoder: Mlp, prior: MixturePrior, noise: NoiseSpec) -> Result<Self> {
        let d = prior.latent_dim();
        if encoder.output_dim() != d || decoder.input_dim() != d || noise.dim() != d {
            return Err(Error::Config(format!(
                "latent width mismatch: encoder out {}, decoder in {}, noise {}, prior {d}",
                encoder.output_dim(),
                decoder.input_dim(),
                noise.dim()
            )));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::Config(format!(
                "decoder output width {} differs from input width {}",
                decoder.output_dim(),
                encoder.input_dim()
            )));
        }
        let last = &decoder.layers()[decoder.layers().len() - 1];
        if last.activation() != Activation::Sigmoid {
            return Err(Error::Config("decoder must end in a sigmoid layer".into()));
        }
        Ok(GmvaeModel {
            encoder,
            decoder,
            prior,
            noise,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.latent_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.prior.num_classes()
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn prior(&self) -> &MixturePrior {
        &self.prior
    }

    /// The encoder noise is read-only for the lifetime of the model.
    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Deterministic encoder mean `f(x)`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(x)
    }

    /// `g(z)`, every coordinate in `(0, 1)`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z)
    }

    /// `||x - g(f(x))||^2` with no latent noise.
    pub fn reconstruction_error(&self, x: &Tensor) -> Result<f64> {
        let recon = self.decode(&self.encode(x)?)?;
        squared_l2(x, &recon)
    }

    pub(crate) fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder.params().chain(self.decoder.params())
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.encoder.params_mut().chain(self.decoder.params_mut())
    }

    pub fn num_params(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    pub(crate) fn record_encode<'a>(&'a self, tape: &mut Tape<'a>, x: NodeId, track: bool) -> Result<(NodeId, Vec<NodeId>)> {
        self.encoder.record(tape, x, track)
    }

    pub(crate) fn record_decode<'a>(&'a self, tape: &mut Tape<'a>, z: NodeId, track: bool) -> Result<(NodeId, Vec<NodeId>)> {
        self.decoder.record(tape, z, track)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Dense;

    fn small() -> GmvaeModel {
        let cfg = ModelConfig {
            input_dim: 6,
            num_classes: 3,
            encoder_hidden: vec![5],
            decoder_hidden: vec![5],
            ..ModelConfig::default()
        };
        GmvaeModel::new(&cfg, 1).unwrap()
    }

    #[test]
    fn zero_final_encoder_layer_gives_zero_code() {
        let m = small();
        let mut layers = m.encoder().layers().to_vec();
        let last = layers.len() - 1;
        let (rows, cols) = (layers[last].outputs(), layers[last].inputs());
        layers[last] = Dense::new(Tensor::zeros(&[rows, cols]), Tensor::zeros(&[rows]), Activation::Identity).unwrap();
        let m = GmvaeModel::from_parts(
            Mlp::from_layers(layers).unwrap(),
            m.decoder().clone(),
            m.prior().clone(),
            m.noise().clone(),
        )
        .unwrap();
        let z = m.encode(&Tensor::filled(&[6], 0.7)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_and_decode_are_deterministic() {
        let m = small();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(m.encode(&x).unwrap(), m.encode(&x).unwrap());
        let z = Tensor::vector(vec![3.0, -40.0, 0.5]);
        let a = m.decode(&z).unwrap();
        assert_eq!(a, m.decode(&z).unwrap());
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = small();
        assert!(m.encode(&Tensor::zeros(&[5])).is_err());
        assert!(m.decode(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn prior_variance_defaults_to_noise_variance() {
        let cfg = ModelConfig::default();
        let m = GmvaeModel::new(&cfg, 0).unwrap();
        assert_eq!(m.prior().variance(), m.noise().variance());
        assert_eq!(m.latent_dim(), 4);
    }
}
