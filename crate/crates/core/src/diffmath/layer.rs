//! Dense layers and multilayer perceptrons built from the tensor primitives.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tape::{NodeId, Tape};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: Tensor) -> Tensor {
        match self {
            Activation::Identity => x,
            Activation::Relu => tensor::relu(&x),
            Activation::Sigmoid => tensor::sigmoid(&x),
        }
    }

    fn record(self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// `activation(W x + b)` with `W` stored as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        match weights.shape() {
            &[rows, _] if bias.shape() == [rows] => Ok(Dense {
                weights,
                bias,
                activation,
            }),
            other => Err(Error::shape("Dense::new", other, bias.shape())),
        }
    }

    /// He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / inputs as f64).sqrt(),
            _ => (6.0 / (inputs + outputs) as f64).sqrt(),
        };
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let data = (0..inputs * outputs).map(|_| dist.sample(rng)).collect();
        Dense {
            weights: Tensor::new(vec![outputs, inputs], data).expect("sized above"),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.activation.apply(tensor::affine(x, &self.weights, &self.bias)?))
    }
}

/// A stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(
                    "Mlp::from_layers",
                    pair[0].weights.shape(),
                    pair[1].weights.shape(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    /// Layers of widths `widths[0] -> widths[1] -> ...`; every layer but the
    /// last uses `hidden`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`. With `track_params` the weights and
    /// biases become variable leaves, returned in `[w0, b0, w1, b1, ...]` order.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, x: NodeId, track_params: bool) -> Result<(NodeId, Vec<NodeId>)> {
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut h = x;
        for layer in &self.layers {
            let (w, b) = if track_params {
                (tape.var_ref(&layer.weights), tape.var_ref(&layer.bias))
            } else {
                (tape.constant_ref(&layer.weights), tape.constant_ref(&layer.bias))
            };
            params.push(w);
            params.push(b);
            let a = tape.affine(h, w, b)?;
            h = layer.activation.record(tape, a)?;
        }
        Ok((h, params))
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }
}
