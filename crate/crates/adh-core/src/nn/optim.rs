//! SGD with Nesterov momentum, weight decay, and learning-rate schedules.
//!
//! The update follows the PyTorch convention: with gradient `g`, parameter
//! `w`, velocity `v`, momentum `mu`, and decay `wd`,
//!
//! ```text
//! g <- g + wd * w
//! v <- mu * v + g
//! w <- w - lr * (g + mu * v)
//! ```
//!
//! so decay is coupled (applied through the momentum buffer).

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients};
use crate::error::{Error, Result};

/// Maps a step index to a learning-rate multiplier on the base rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// The base rate throughout.
    Constant,
    /// Half-cosine decay: `lr(t) = base * 0.5 * (1 + cos(pi * t / total))`,
    /// so `lr(0) = base` and `lr(total) = 0`. Steps past `total` stay at 0.
    Cosine { total_steps: usize },
    /// Multiplies the rate by `factor` at each milestone step.
    MultiStep { milestones: Vec<usize>, factor: f64 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::Constant => Ok(()),
            LrSchedule::Cosine { total_steps } => {
                if *total_steps == 0 {
                    Err(Error::config("cosine schedule needs at least one step".to_string()))
                } else {
                    Ok(())
                }
            }
            LrSchedule::MultiStep { milestones, factor } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    return Err(Error::config(format!("milestone factor must be finite and positive, got {factor}")));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("milestones must be strictly increasing".to_string()));
                }
                Ok(())
            }
        }
    }

    /// Learning rate at `step` (0-based) for the given base rate.
    pub fn lr_at(&self, base_lr: f64, step: usize) -> f64 {
        match self {
            LrSchedule::Constant => base_lr,
            LrSchedule::Cosine { total_steps } => {
                let t = step.min(*total_steps) as f64 / *total_steps as f64;
                base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            LrSchedule::MultiStep { milestones, factor } => {
                let hits = milestones.iter().filter(|&&m| m <= step).count();
                base_lr * factor.powi(hits as i32)
            }
        }
    }
}

/// Nesterov-momentum SGD bound to one network architecture.
#[derive(Clone, Debug)]
pub struct Sgd {
    base_lr: f64,
    momentum: f64,
    weight_decay: f64,
    schedule: LrSchedule,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(base_lr: f64, momentum: f64, weight_decay: f64, schedule: LrSchedule) -> Result<Sgd> {
        if !(base_lr.is_finite() && base_lr > 0.0) {
            return Err(Error::config(format!("learning rate must be finite and positive, got {base_lr}")));
        }
        if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::config(format!("weight decay must be finite and non-negative, got {weight_decay}")));
        }
        schedule.validate()?;
        Ok(Sgd { base_lr, momentum, weight_decay, schedule, velocity: None })
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    /// Learning rate this optimizer would use at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.schedule.lr_at(self.base_lr, step)
    }

    /// Applies one update at `step_index` (0-based, drives the schedule).
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients, step_index: usize) -> Result<()> {
        if grads.layers.len() != net.layers().len() {
            return Err(Error::shape(format!(
                "gradients cover {} layers, network has {}",
                grads.layers.len(),
                net.layers().len()
            )));
        }
        let velocity = self.velocity.get_or_insert_with(|| Gradients::zeros_like(net));
        if velocity.layers.len() != grads.layers.len() {
            return Err(Error::usage("optimizer state belongs to a different architecture".to_string()));
        }
        let lr = self.schedule.lr_at(self.base_lr, step_index);
        let mu = self.momentum;
        let wd = self.weight_decay;
        for ((layer, g), v) in net
            .layers_mut()
            .iter_mut()
            .zip(grads.layers.iter())
            .zip(velocity.layers.iter_mut())
        {
            if g.d_weights.raw_dim() != layer.weights.raw_dim() || g.d_bias.raw_dim() != layer.bias.raw_dim() {
                return Err(Error::shape("gradient shape does not match layer parameters".to_string()));
            }
            step_tensor(&mut layer.weights, &g.d_weights, &mut v.d_weights, lr, mu, wd);
            step_vector(&mut layer.bias, &g.d_bias, &mut v.d_bias, lr, mu, wd);
        }
        net.bump_revision();
        Ok(())
    }
}

fn update(w: &mut f64, grad: f64, vel: &mut f64, lr: f64, mu: f64, wd: f64) {
    let g = grad + wd * *w;
    *vel = mu * *vel + g;
    *w -= lr * (g + mu * *vel);
}

fn step_tensor(
    w: &mut ndarray::Array2<f64>,
    g: &ndarray::Array2<f64>,
    v: &mut ndarray::Array2<f64>,
    lr: f64,
    mu: f64,
    wd: f64,
) {
    Zip::from(w).and(g).and(v).for_each(|w, &g, v| update(w, g, v, lr, mu, wd));
}

fn step_vector(
    w: &mut ndarray::Array1<f64>,
    g: &ndarray::Array1<f64>,
    v: &mut ndarray::Array1<f64>,
    lr: f64,
    mu: f64,
    wd: f64,
) {
    Zip::from(w).and(g).and(v).for_each(|w, &g, v| update(w, g, v, lr, mu, wd));
}
