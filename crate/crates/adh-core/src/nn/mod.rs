//! Minimal dense feed-forward networks with exact analytic gradients.
//!
//! Weights are stored row-major as `(out_dim, in_dim)` matrices; a forward
//! pass over a batch `x` of shape `(batch, in_dim)` computes
//! `activation(x · Wᵀ + b)` layer by layer, recording every pre-activation so
//! [`DenseNet::backward`] can return the exact gradient of a scalar batch
//! loss with respect to every parameter and to the input batch. Parameter
//! updates go through [`Sgd`], which bumps the network's revision counter;
//! a [`ForwardCache`] from before an update is rejected as stale.

mod checkpoint;
mod optim;

pub use checkpoint::{load_net, save_net, NetState};
pub use optim::{LrSchedule, Sgd};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise non-linearity applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative with respect to the pre-activation (ReLU uses the
    /// zero subgradient at the kink).
    fn derivative(self, pre: f64) -> f64 {
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

/// One affine layer plus its activation.
#[derive(Clone, Debug)]
pub struct Layer {
    /// `(out_dim, in_dim)`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    /// He-style initialization: weights uniform in
    /// `[-sqrt(6 / in_dim), sqrt(6 / in_dim)]`, biases zero.
    pub fn he_uniform<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Layer {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-limit..limit));
        Layer { weights, bias: Array1::zeros(out_dim), activation }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-layer gradients, shaped exactly like the layer's parameters.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub d_weights: Array2<f64>,
    pub d_bias: Array1<f64>,
}

/// Gradients for every layer of a [`DenseNet`], ordered input to output.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Gradients {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGrads {
                d_weights: Array2::zeros(l.weights.raw_dim()),
                d_bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Gradients { layers }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.d_weights.iter().all(|v| v.is_finite()) && l.d_bias.iter().all(|v| v.is_finite()))
    }
}

/// Activations recorded by [`DenseNet::forward`], consumed by
/// [`DenseNet::backward`]. Tied to the parameter revision it was computed
/// under; using it after an update is a usage error.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer: `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pres: Vec<Array2<f64>>,
    revision: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    /// Pre-activation matrix of each layer, in layer order.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pres
    }
}

/// A fully-connected feed-forward network.
#[derive(Clone, Debug)]
pub struct DenseNet {
    input_dim: usize,
    layers: Vec<Layer>,
    revision: u64,
}

impl DenseNet {
    /// Builds `input_dim -> hidden[0] -> ... -> output_dim` with ReLU hidden
    /// layers and an identity output layer, He-uniform initialized from `rng`.
    pub fn new<R: Rng>(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut R) -> Result<DenseNet> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::config("layer dimensions must be positive".to_string()));
        }
        if hidden.contains(&0) {
            return Err(Error::config("hidden dimensions must be positive".to_string()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_dim = input_dim;
        for &h in hidden {
            layers.push(Layer::he_uniform(in_dim, h, Activation::Relu, rng));
            in_dim = h;
        }
        layers.push(Layer::he_uniform(in_dim, output_dim, Activation::Identity, rng));
        DenseNet::from_layers(input_dim, layers)
    }

    /// Assembles a network from explicit layers, validating that consecutive
    /// dimensions chain.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<DenseNet> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer".to_string()));
        }
        if input_dim == 0 {
            return Err(Error::config("input dimension must be positive".to_string()));
        }
        let mut expected = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != expected {
                return Err(Error::shape(format!(
                    "layer {i} expects input dim {}, previous layer produces {expected}",
                    layer.in_dim()
                )));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(format!(
                    "layer {i} has {} bias entries for {} outputs",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            expected = layer.out_dim();
        }
        Ok(DenseNet { input_dim, layers, revision: 0 })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Total number of scalar parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.out_dim() * (l.in_dim() + 1)).sum()
    }

    /// Bumped on every parameter update; forward caches are pinned to it.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a hash of every parameter's bit pattern, in storage order.
    /// Changes iff some parameter changed; used to assert update isolation.
    pub fn param_fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: &f64| {
            for b in v.to_bits().to_le_bytes() {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for layer in &self.layers {
            layer.weights.iter().for_each(&mut eat);
            layer.bias.iter().for_each(&mut eat);
        }
        hash
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn bump_revision(&mut self) {
        self.revision += 1;
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::shape("empty batch".to_string()));
        }
        if x.ncols() != self.input_dim {
            return Err(Error::shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Forward pass returning the logits and a cache for [`Self::backward`].
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut act = x.to_owned();
        for layer in &self.layers {
            let pre = act.dot(&layer.weights.t()) + &layer.bias;
            let out = pre.mapv(|v| layer.activation.apply(v));
            inputs.push(std::mem::replace(&mut act, out));
            pres.push(pre);
        }
        Ok((act, ForwardCache { inputs, pres, revision: self.revision }))
    }

    /// Forward pass without recording a cache (inference only).
    pub fn forward_logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut act = x.to_owned();
        for layer in &self.layers {
            let pre = act.dot(&layer.weights.t()) + &layer.bias;
            act = pre.mapv(|v| layer.activation.apply(v));
        }
        Ok(act)
    }

    /// Back-propagates `d_logits` (the gradient of a scalar loss with respect
    /// to the forward pass's output) through the cached activations.
    ///
    /// Returns the parameter gradients and the gradient with respect to the
    /// input batch. The cache must come from a forward pass at the current
    /// parameter revision.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if cache.revision != self.revision {
            return Err(Error::usage(format!(
                "stale forward cache: computed at revision {}, parameters now at {}",
                cache.revision, self.revision
            )));
        }
        let batch = cache.batch_size();
        let out_dim = self.output_dim();
        if d_logits.nrows() != batch || d_logits.ncols() != out_dim {
            return Err(Error::shape(format!(
                "upstream gradient is {}x{}, expected {batch}x{out_dim}",
                d_logits.nrows(),
                d_logits.ncols()
            )));
        }
        let mut d_out = d_logits.to_owned();
        let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        for (layer, (input, pre)) in self
            .layers
            .iter()
            .zip(cache.inputs.iter().zip(cache.pres.iter()))
            .rev()
        {
            let d_pre = match layer.activation {
                Activation::Identity => d_out,
                Activation::Relu => d_out * &pre.mapv(|v| layer.activation.derivative(v)),
            };
            layer_grads.push(LayerGrads {
                d_weights: d_pre.t().dot(input),
                d_bias: d_pre.sum_axis(Axis(0)),
            });
            d_out = d_pre.dot(&layer.weights);
        }
        layer_grads.reverse();
        Ok((Gradients { layers: layer_grads }, d_out))
    }
}
