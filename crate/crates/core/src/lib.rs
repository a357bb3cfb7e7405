//! Selective classification with a Gaussian-mixture-prior variational
//! autoencoder.
//!
//! The encoder maps an input to a latent code, each class owns one mixture
//! component with a one-hot mean, and a decoder maps codes back to inputs.
//! Inputs are labeled by the nearest class mean and rejected when the code is
//! improbable under the prior or the reconstruction is poor. The crate also
//! carries the attacks used to probe that defense and a decoder-inversion
//! procedure that recovers labels for rejected inputs.

pub mod attacks;
pub mod cli;
pub mod data;
pub mod diffmath;
pub mod error;
pub mod gmvae;
pub mod reclassify;
pub mod selector;
pub mod training;

pub use error::{Error, Result};
