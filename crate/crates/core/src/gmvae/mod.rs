//! The generative classifier: encoder, decoder, Gaussian-mixture latent prior
//! with one-hot class means, and fixed-variance latent sampling.

mod checkpoint;
mod model;
mod prior;

pub use checkpoint::{FORMAT_VERSION, MAGIC};
pub use model::{GmvaeModel, ModelConfig};
pub use prior::{mixture_log_density, sample_latent, MixturePrior, NoiseSpec};
