//! Modality encoders: small MLPs whose output is L2-normalized before fusion.

use rand::Rng;

use super::linalg::{l2_norm, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative w.r.t. the pre-activation (ReLU uses the 0 subgradient at 0).
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix, // out_dim x in_dim
    pub bias: Vec<f64>, // out_dim
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    /// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut weight = Matrix::zeros(out_dim, in_dim);
        for w in weight.data_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        DenseLayer {
            weight,
            bias: vec![0.0; out_dim],
            activation,
        }
    }
}

/// Per-layer `(activations, pre-activations)` kept by
/// [`EncoderParams::forward_traced`] for backprop.
pub(crate) type ForwardTrace = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Stack of dense layers; the last layer's output is the feature that gets
/// L2-normalized by [`EncoderParams::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<DenseLayer>,
}

impl EncoderParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid_data("encoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape {
                    context: "EncoderParams::new layer chaining",
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(EncoderParams { layers })
    }

    /// Two-layer MLP `in -> hidden (ReLU) -> out (identity)`.
    pub fn init_mlp(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        EncoderParams {
            layers: vec![
                DenseLayer::init(in_dim, hidden, Activation::Relu, rng),
                DenseLayer::init(hidden, out_dim, Activation::Identity, rng),
            ],
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Forward pass followed by L2 normalization. A zero pre-normalization
    /// output stays the zero vector.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (mut out, _) = self.forward_traced(x)?;
        let feat = out.pop().expect("at least one layer output");
        Ok(normalized(feat))
    }

    /// Forward pass that keeps per-layer pre-activations and activations for
    /// backprop. Returns (activations per layer, pre-activations per layer);
    /// the final activation is the raw (pre-normalization) feature.
    pub(crate) fn forward_traced(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape {
                context: "EncoderParams::encode input",
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut pre = layer.weight.matvec(&cur)?;
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            cur = pre.iter().map(|&p| layer.activation.apply(p)).collect();
            pre_acts.push(pre);
            activations.push(cur.clone());
        }
        Ok((activations, pre_acts))
    }
}

pub(crate) fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    v
}
