//! Classification losses over raw logits, each with its exact analytic
//! gradient.
//!
//! Every loss maps a logit vector `z` and an integer label `y` to a scalar;
//! batch variants reduce by the mean over rows. Gradients are derived in
//! closed form (no autodiff): for cross-entropy the label component is
//! computed as the negated sum of the off-label softmax outputs, which keeps
//! the components summing to zero without the `p - 1` cancellation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default focusing exponent for the focal loss.
pub const DEFAULT_FOCAL_GAMMA: f64 = 3.0;

/// Which loss to evaluate.
///
/// `Annealed { beta }` is cross-entropy applied to `beta * z`: the loss used
/// by the calibration head, whose gradient is exactly
/// `beta * (softmax(beta * z) - onehot(y))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    #[serde(rename = "ce")]
    CrossEntropy,
    Brier,
    Focal { gamma: f64 },
    #[serde(rename = "adh")]
    Annealed { beta: f64 },
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::CrossEntropy => write!(f, "ce"),
            LossKind::Brier => write!(f, "brier"),
            LossKind::Focal { gamma } => write!(f, "focal(gamma={gamma})"),
            LossKind::Annealed { beta } => write!(f, "adh(beta={beta})"),
        }
    }
}

/// Numerically stable softmax.
///
/// The maximum is subtracted before exponentiation, so arbitrarily large
/// logits do not overflow. Expects a non-empty slice of finite values.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    debug_assert!(!z.is_empty());
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// `log(sum(exp(z)))` with the max factored out for stability.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    debug_assert!(!z.is_empty());
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Evaluates `kind` on a single logit vector, returning the loss and its
/// gradient with respect to `z`.
pub fn loss_and_grad(kind: LossKind, z: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    validate_logits(z, label)?;
    match kind {
        LossKind::CrossEntropy => Ok(scaled_cross_entropy(z, label, 1.0)),
        LossKind::Annealed { beta } => {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(Error::config(format!("annealing factor must be finite and positive, got {beta}")));
            }
            Ok(scaled_cross_entropy(z, label, beta))
        }
        LossKind::Brier => Ok(brier(z, label)),
        LossKind::Focal { gamma } => {
            if !(gamma.is_finite() && gamma >= 0.0) {
                return Err(Error::config(format!("focal exponent must be finite and non-negative, got {gamma}")));
            }
            Ok(focal(z, label, gamma))
        }
    }
}

/// Mean loss over a batch of logit rows, plus the gradient of that mean with
/// respect to every logit.
pub fn batch_loss_and_grad(kind: LossKind, logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let rows = logits.nrows();
    if rows == 0 {
        return Err(Error::shape("empty batch".to_string()));
    }
    if rows != labels.len() {
        return Err(Error::shape(format!("{rows} logit rows but {} labels", labels.len())));
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut grads = Array2::zeros(logits.raw_dim());
    let mut row_buf = Vec::with_capacity(logits.ncols());
    for (i, row) in logits.rows().into_iter().enumerate() {
        row_buf.clear();
        row_buf.extend(row.iter().copied());
        let (loss, grad) = loss_and_grad(kind, &row_buf, labels[i])?;
        total += loss;
        for (j, g) in grad.iter().enumerate() {
            grads[[i, j]] = g * scale;
        }
    }
    Ok((total * scale, grads))
}

fn validate_logits(z: &[f64], label: usize) -> Result<()> {
    if z.len() < 2 {
        return Err(Error::shape(format!("need at least 2 logits, got {}", z.len())));
    }
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::config(format!("non-finite logit {bad}")));
    }
    if label >= z.len() {
        return Err(Error::config(format!("label {label} out of range for {} classes", z.len())));
    }
    Ok(())
}

/// Cross-entropy of `softmax(beta * z)`; `beta = 1` is the plain loss.
///
/// The gradient is `beta * (softmax(beta * z) - onehot(label))`, with the
/// label component accumulated as `-beta * sum_{j != label} p_j` so the plain
/// cross-entropy gradient sums to zero exactly.
fn scaled_cross_entropy(z: &[f64], label: usize, beta: f64) -> (f64, Vec<f64>) {
    let zb: Vec<f64> = z.iter().map(|&v| v * beta).collect();
    let p = softmax(&zb);
    let loss = log_sum_exp(&zb) - zb[label];
    let mut grad = vec![0.0; z.len()];
    let mut off_label = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        if j != label {
            off_label += pj;
            grad[j] = beta * pj;
        }
    }
    grad[label] = -(beta * off_label);
    (loss, grad)
}

/// Squared error between the softmax output and the one-hot target, summed
/// over classes. The gradient routes through the softmax Jacobian:
/// `dL/dz_k = 2 p_k ((p_k - y_k) - sum_j (p_j - y_j) p_j)`.
fn brier(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = softmax(z);
    let mut loss = 0.0;
    let mut dot = 0.0; // sum_j (p_j - y_j) p_j
    for (j, &pj) in p.iter().enumerate() {
        let diff = if j == label { pj - 1.0 } else { pj };
        loss += diff * diff;
        dot += diff * pj;
    }
    let grad = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let diff = if k == label { pk - 1.0 } else { pk };
            2.0 * pk * (diff - dot)
        })
        .collect();
    (loss, grad)
}

/// Focal loss `-(1 - u)^gamma * log u` on the label probability `u`.
///
/// With `d/du = gamma (1-u)^(gamma-1) log u - (1-u)^gamma / u` and
/// `du/dz_j = u (delta_{j,label} - p_j)`, the chain rule gives the exact
/// gradient; at `gamma = 0` the formulas reduce to cross-entropy.
fn focal(z: &[f64], label: usize, gamma: f64) -> (f64, Vec<f64>) {
    let p = softmax(z);
    let log_u = z[label] - log_sum_exp(z);
    let u = log_u.exp();
    let one_minus = 1.0 - u;
    if one_minus == 0.0 {
        // u rounded up to 1. The focal factor annihilates loss and gradient
        // for gamma > 0; gamma = 0 is exactly cross-entropy.
        return if gamma == 0.0 {
            scaled_cross_entropy(z, label, 1.0)
        } else {
            (0.0, vec![0.0; z.len()])
        };
    }
    // 0^0 = 1 per powf, so gamma = 0 degrades gracefully.
    let loss = -one_minus.powf(gamma) * log_u;
    let dl_du = gamma * one_minus.powf(gamma - 1.0) * log_u - one_minus.powf(gamma) / u;
    let mut grad = vec![0.0; z.len()];
    let mut off_label = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        if j != label {
            off_label += pj;
            grad[j] = dl_du * u * (-pj);
        }
    }
    grad[label] = dl_du * u * off_label;
    (loss, grad)
}
