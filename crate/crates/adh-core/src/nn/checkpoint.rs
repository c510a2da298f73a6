//! Network checkpoints: a flat, versioned JSON layout.
//!
//! ```text
//! { "version": 1,
//!   "input_dim": D,
//!   "layers": [ { "in_dim": I, "out_dim": O, "activation": "relu" | "identity",
//!                 "weights": [O*I floats, row-major], "bias": [O floats] }, ... ] }
//! ```
//!
//! Floats are emitted with shortest round-trip precision, so a load restores
//! parameters bit-for-bit.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNet, Layer};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LayerState {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Serializable snapshot of a [`DenseNet`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetState {
    version: u32,
    input_dim: usize,
    layers: Vec<LayerState>,
}

impl DenseNet {
    pub fn to_state(&self) -> NetState {
        NetState {
            version: CHECKPOINT_VERSION,
            input_dim: self.input_dim(),
            layers: self
                .layers()
                .iter()
                .map(|l| LayerState {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_state(state: &NetState) -> Result<DenseNet> {
        if state.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {} (this build reads {CHECKPOINT_VERSION})",
                state.version
            )));
        }
        let mut layers = Vec::with_capacity(state.layers.len());
        for (i, l) in state.layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim {
                return Err(Error::shape(format!(
                    "layer {i}: {} weights for a {}x{} matrix",
                    l.weights.len(),
                    l.out_dim,
                    l.in_dim
                )));
            }
            if l.bias.len() != l.out_dim {
                return Err(Error::shape(format!(
                    "layer {i}: {} bias entries for {} outputs",
                    l.bias.len(),
                    l.out_dim
                )));
            }
            let weights = Array2::from_shape_vec((l.out_dim, l.in_dim), l.weights.clone())
                .expect("length checked above");
            layers.push(Layer { weights, bias: Array1::from_vec(l.bias.clone()), activation: l.activation });
        }
        DenseNet::from_layers(state.input_dim, layers)
    }
}

/// Writes `net` to `path` atomically.
pub fn save_net(net: &DenseNet, path: &Path) -> Result<()> {
    let state = net.to_state();
    atomic_write(path, |out| serde_json::to_writer_pretty(out, &state).map_err(Into::into))
}

/// Loads a checkpoint written by [`save_net`].
pub fn load_net(path: &Path) -> Result<DenseNet> {
    let file = BufReader::new(File::open(path)?);
    let state: NetState = serde_json::from_reader(file)?;
    DenseNet::from_state(&state)
}
