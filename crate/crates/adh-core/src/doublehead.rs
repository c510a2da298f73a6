//! The double-head model: a deep main classifier plus a shallow calibration
//! head that reads the main head's logits.
//!
//! The calibration head is a one-hidden-layer ReLU net `n -> ceil(n/2) -> n`
//! over the `n` main logits. Its forward pass can scale the incoming logits
//! by an annealing factor `beta`, and its backward pass either stops at the
//! logit interface (`stop_main_grad`, the isolated update used in training)
//! or continues into the main head's parameters for diagnostics.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::nn::{DenseNet, ForwardCache, Gradients, NetState};

/// Selects which head's output to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Main,
    Calib,
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Head::Main => write!(f, "main"),
            Head::Calib => write!(f, "calib"),
        }
    }
}

/// Main head plus calibration head sharing the logit interface.
#[derive(Clone, Debug)]
pub struct DoubleHeadModel {
    pub main: DenseNet,
    pub calib: DenseNet,
}

/// Everything needed to back-propagate one calibration forward pass.
pub struct CalibForward {
    calib_cache: ForwardCache,
    /// Present only when the pass was built with `stop_main_grad = false`.
    main_cache: Option<ForwardCache>,
    beta: f64,
}

/// Gradients from [`DoubleHeadModel::calib_backward`]; `main` is `None` when
/// the forward pass was isolated.
pub struct CalibGrads {
    pub calib: Gradients,
    pub main: Option<Gradients>,
}

impl DoubleHeadModel {
    /// Builds a fresh model: main head `input_dim -> hidden... -> n_classes`
    /// (ReLU hidden layers), calibration head `n -> ceil(n/2) -> n`. The two
    /// heads are initialized from independent streams of the same seed.
    pub fn new(input_dim: usize, main_hidden: &[usize], n_classes: usize, seed: u64) -> Result<DoubleHeadModel> {
        if n_classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {n_classes}")));
        }
        let mut main_rng = ChaCha8Rng::seed_from_u64(seed);
        main_rng.set_stream(0);
        let mut calib_rng = ChaCha8Rng::seed_from_u64(seed);
        calib_rng.set_stream(1);
        let main = DenseNet::new(input_dim, main_hidden, n_classes, &mut main_rng)?;
        let mut calib = DenseNet::new(n_classes, &[n_classes.div_ceil(2)], n_classes, &mut calib_rng)?;
        // The calibration head opens at the uniform distribution: zeroing its
        // output layer keeps the early loss surface flat (curvature grows with
        // the output scale) instead of forcing it to unlearn a random init.
        // The hidden layer stays random, so gradients reach both layers.
        if let Some(last) = calib.layers_mut().last_mut() {
            last.weights.fill(0.0);
            last.bias.fill(0.0);
        }
        Ok(DoubleHeadModel { main, calib })
    }

    /// Assembles a model from explicit heads. Only the logit interface is
    /// checked (the calibration head must map `n -> n` over the main head's
    /// output dimension); the head built by [`DoubleHeadModel::new`]
    /// additionally uses a single `ceil(n/2)` hidden layer.
    pub fn from_parts(main: DenseNet, calib: DenseNet) -> Result<DoubleHeadModel> {
        let n = main.output_dim();
        if calib.input_dim() != n || calib.output_dim() != n {
            return Err(Error::shape(format!(
                "calibration head maps {} -> {}, main head produces {n} logits",
                calib.input_dim(),
                calib.output_dim()
            )));
        }
        Ok(DoubleHeadModel { main, calib })
    }

    pub fn n_classes(&self) -> usize {
        self.main.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.main.input_dim()
    }

    /// Main-head logits for a feature batch.
    pub fn main_logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.main.forward_logits(x)
    }

    /// Calibration-head logits: `calib(beta * main(x))`.
    ///
    /// `beta` scales the logits handed to the calibration head; evaluation
    /// uses `beta = 1`. The `stop_main_grad` flag does not change the value,
    /// only whether a paired backward pass may reach the main head, so it is
    /// ignored here.
    pub fn calib_logits(&self, x: &Array2<f64>, beta: f64, _stop_main_grad: bool) -> Result<Array2<f64>> {
        check_beta(beta)?;
        let z = self.main.forward_logits(x)?;
        self.calib.forward_logits(&(z * beta))
    }

    /// Logits of the selected head (`beta = 1` for the calibration head).
    pub fn head_logits(&self, head: Head, x: &Array2<f64>) -> Result<Array2<f64>> {
        match head {
            Head::Main => self.main_logits(x),
            Head::Calib => self.calib_logits(x, 1.0, true),
        }
    }

    /// Forward pass through both heads that records the caches needed for
    /// [`Self::calib_backward`]. With `stop_main_grad` the main-head cache is
    /// dropped, structurally preventing any gradient from reaching it.
    pub fn calib_forward(&self, x: &Array2<f64>, beta: f64, stop_main_grad: bool) -> Result<(Array2<f64>, CalibForward)> {
        check_beta(beta)?;
        let (main_logits, main_cache) = self.main.forward(x)?;
        let (out, calib_cache) = self.calib.forward(&(main_logits * beta))?;
        Ok((
            out,
            CalibForward {
                calib_cache,
                main_cache: if stop_main_grad { None } else { Some(main_cache) },
                beta,
            },
        ))
    }

    /// Back-propagates a loss gradient on the calibration head's output.
    ///
    /// Always produces calibration-head gradients. If the forward pass kept
    /// the main-head cache, the chain continues through the `beta` scaling
    /// into the main head and `main` is `Some`; for an isolated pass it is
    /// `None` and the main head is untouched by construction.
    pub fn calib_backward(&self, fwd: &CalibForward, d_logits: &Array2<f64>) -> Result<CalibGrads> {
        let (calib_grads, d_scaled) = self.calib.backward(&fwd.calib_cache, d_logits)?;
        let main = match &fwd.main_cache {
            None => None,
            Some(cache) => {
                let d_main_logits = d_scaled * fwd.beta;
                let (main_grads, _) = self.main.backward(cache, &d_main_logits)?;
                Some(main_grads)
            }
        };
        Ok(CalibGrads { calib: calib_grads, main })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::config(format!("annealing factor must be finite and positive, got {beta}")));
    }
    Ok(())
}

/// Serializable snapshot of both heads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelState {
    version: u32,
    main: NetState,
    calib: NetState,
}

const MODEL_VERSION: u32 = 1;

impl DoubleHeadModel {
    pub fn to_state(&self) -> ModelState {
        ModelState { version: MODEL_VERSION, main: self.main.to_state(), calib: self.calib.to_state() }
    }

    pub fn from_state(state: &ModelState) -> Result<DoubleHeadModel> {
        if state.version != MODEL_VERSION {
            return Err(Error::config(format!(
                "unsupported model version {} (this build reads {MODEL_VERSION})",
                state.version
            )));
        }
        DoubleHeadModel::from_parts(DenseNet::from_state(&state.main)?, DenseNet::from_state(&state.calib)?)
    }

    /// Writes both heads to `path` atomically as versioned JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let state = self.to_state();
        atomic_write(path, |out| serde_json::to_writer_pretty(out, &state).map_err(Into::into))
    }

    pub fn load(path: &Path) -> Result<DoubleHeadModel> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let state: ModelState = serde_json::from_reader(file)?;
        DoubleHeadModel::from_state(&state)
    }
}
