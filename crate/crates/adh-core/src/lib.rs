//! Core library for calibration-aware training of small dense networks.
//!
//! The centerpiece is a double-head model: a deep main head trained for
//! accuracy and a shallow calibration head trained on held-out data with an
//! annealed softmax-sharpness schedule, so the calibration head learns
//! honest confidence without disturbing the main head's decision boundary.
//! Around it: an exact-gradient dense-network engine, the loss family
//! (cross-entropy, Brier, focal, annealed cross-entropy), calibration
//! metrics, a temperature-scaling baseline, dataset synthesis and
//! corruption, and verification oracles for the method's analytic claims.

pub mod dataset;
pub mod doublehead;
mod error;
pub mod fsutil;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod oracles;
pub mod postproc;
pub mod trainer;

pub use error::{Error, Result};
