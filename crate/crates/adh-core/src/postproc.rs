//! Temperature scaling: the post-hoc calibration baseline.
//!
//! A single temperature `T` rescales logits to `z / T` before the softmax.
//! [`fit_temperature`] minimizes negative log-likelihood on a held-out set
//! by golden-section search over `log T`; the NLL is convex in `1/T`, so it
//! is unimodal in `log T` and the search converges to the global optimum.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{log_sum_exp, softmax};

/// Search interval for the temperature.
pub const TEMPERATURE_MIN: f64 = 0.05;
pub const TEMPERATURE_MAX: f64 = 20.0;

/// Absolute tolerance on `log T` at which the search stops.
const LOG_T_TOLERANCE: f64 = 1e-4;

/// Result of [`fit_temperature`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// Mean NLL of the raw logits on the fitting set.
    pub nll_before: f64,
    /// Mean NLL at the fitted temperature; never exceeds `nll_before`.
    pub nll_after: f64,
    /// Set when the optimum sits at the search boundary — the fit is then a
    /// clamp, not an interior optimum (e.g. degenerate single-sample sets).
    pub degenerate: bool,
}

/// Mean NLL of `softmax(z / t)` against the labels.
fn mean_nll_at(logits: &Array2<f64>, labels: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    let mut row_buf = Vec::with_capacity(logits.ncols());
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        row_buf.clear();
        row_buf.extend(row.iter().map(|&v| v / t));
        total += log_sum_exp(&row_buf) - row_buf[y];
    }
    total / logits.nrows() as f64
}

fn validate(logits: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() == 0 {
        return Err(Error::config("temperature fit needs at least one sample".to_string()));
    }
    if logits.ncols() < 2 {
        return Err(Error::shape(format!("need at least 2 classes, got {}", logits.ncols())));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("non-finite logit".to_string()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::config(format!("label {bad} out of range for {} classes", logits.ncols())));
    }
    Ok(())
}

/// Fits the temperature minimizing mean NLL on `(logits, labels)`.
///
/// Golden-section search over `log T` in `[log 0.05, log 20]`; if the search
/// somehow fails to beat the identity temperature it falls back to `T = 1`,
/// so scaling never increases the fitting NLL.
pub fn fit_temperature(logits: &Array2<f64>, labels: &[usize]) -> Result<TemperatureFit> {
    validate(logits, labels)?;
    let objective = |log_t: f64| mean_nll_at(logits, labels, log_t.exp());

    let mut a = TEMPERATURE_MIN.ln();
    let mut b = TEMPERATURE_MAX.ln();
    // Golden-section: keep two interior probes at the golden ratio.
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while b - a > LOG_T_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let log_t = 0.5 * (a + b);
    let mut temperature = log_t.exp();
    let nll_before = mean_nll_at(logits, labels, 1.0);
    let mut nll_after = mean_nll_at(logits, labels, temperature);
    if nll_after > nll_before {
        // Defensive: unimodality should make this unreachable, but never
        // hand back a temperature worse than doing nothing.
        temperature = 1.0;
        nll_after = nll_before;
    }
    let degenerate = (log_t - TEMPERATURE_MIN.ln()).abs() < 1e-3 || (log_t - TEMPERATURE_MAX.ln()).abs() < 1e-3;
    Ok(TemperatureFit { temperature, nll_before, nll_after, degenerate })
}

/// Calibrated probabilities `softmax(z / t)` for every row. `t` must be
/// positive and finite; the argmax of every row is unchanged.
pub fn apply_temperature(logits: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::config(format!("temperature must be finite and positive, got {t}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("non-finite logit".to_string()));
    }
    let mut out = Array2::zeros(logits.raw_dim());
    let mut row_buf = Vec::with_capacity(logits.ncols());
    for (i, row) in logits.rows().into_iter().enumerate() {
        row_buf.clear();
        row_buf.extend(row.iter().map(|&v| v / t));
        let probs = softmax(&row_buf);
        for (j, p) in probs.into_iter().enumerate() {
            out[[i, j]] = p;
        }
    }
    Ok(out)
}
