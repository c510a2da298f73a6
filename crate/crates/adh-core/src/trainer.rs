//! The interleaved double-head training loop.
//!
//! Each epoch runs `s = ceil(|train| / batch)` main-head SGD steps over a
//! seeded shuffle of the training set. Every `calib_period`-th step
//! additionally updates the calibration head on a batch drawn from the
//! held-out calibration set with replacement: the annealing factor
//! `beta_t = beta0 - (beta0 - 1) * t / s` is evaluated at the current step,
//! the calibration head reads the main head's (detached) logits, and one SGD
//! step is taken on the annealed cross-entropy of the calibration head's
//! output. The main head is never touched by a calibration step — the
//! backward pass stops at the logit interface by construction — and the
//! factor linearly approaches 1 over the epoch, restarting at `beta0` at the
//! next epoch.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{corrupt_features, LabeledDataset, Splits};
use crate::doublehead::{DoubleHeadModel, Head};
use crate::error::{Error, Result};
use crate::losses::{batch_loss_and_grad, LossKind};
use crate::metrics::{
    accuracy, bin_records, confidence_entropy, ece, ece2_binned, nll, records_from_logits, BinPopulation,
};
use crate::nn::{DenseNet, LrSchedule, Sgd};

/// Per-epoch linear annealing of the logit-scaling factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub beta0: f64,
    pub steps_per_epoch: usize,
}

impl AnnealSchedule {
    pub fn new(beta0: f64, steps_per_epoch: usize) -> Result<AnnealSchedule> {
        if !(beta0.is_finite() && beta0 > 0.0) {
            return Err(Error::config(format!("beta0 must be finite and positive, got {beta0}")));
        }
        if steps_per_epoch == 0 {
            return Err(Error::config("need at least one step per epoch".to_string()));
        }
        Ok(AnnealSchedule { beta0, steps_per_epoch })
    }

    /// `beta0 - (beta0 - 1) * t / s`: exactly `beta0` at step 0 and exactly 1
    /// at step `s`. Steps outside `0..=s` are a usage error.
    pub fn beta_at(&self, step: usize) -> Result<f64> {
        let s = self.steps_per_epoch;
        if step > s {
            return Err(Error::usage(format!("step {step} outside the epoch (steps per epoch: {s})")));
        }
        Ok(self.beta0 - (self.beta0 - 1.0) * step as f64 / s as f64)
    }
}

/// Loss driving one head.
///
/// `Annealed` applies the annealed cross-entropy `CE(β_t·z, y)` to the head's
/// own output logits; `beta` follows the per-epoch linear schedule, evaluated
/// at every step the head takes. On the calibration head this stacks on top
/// of the β_t input scaling the trainer always applies (an ablation); the
/// default calibration loss is plain cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadLoss {
    #[serde(rename = "ce")]
    CrossEntropy,
    Brier,
    Focal { gamma: f64 },
    #[serde(rename = "adh")]
    Annealed,
}

impl HeadLoss {
    fn resolve(self, beta_t: f64) -> LossKind {
        match self {
            HeadLoss::CrossEntropy => LossKind::CrossEntropy,
            HeadLoss::Brier => LossKind::Brier,
            HeadLoss::Focal { gamma } => LossKind::Focal { gamma },
            HeadLoss::Annealed => LossKind::Annealed { beta: beta_t },
        }
    }
}

/// Learning-rate policy, resolved to a concrete schedule per head once the
/// step counts are known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulePolicy {
    Constant,
    /// Half-cosine from the base rate to 0 over the whole run.
    Cosine,
    /// Rate multiplied by `factor` at the start of each milestone epoch.
    MultiStep { milestone_epochs: Vec<usize>, factor: f64 },
}

impl SchedulePolicy {
    fn resolve(&self, steps_per_epoch: usize, epochs: usize) -> LrSchedule {
        let total = steps_per_epoch * epochs;
        if total == 0 {
            return LrSchedule::Constant;
        }
        match self {
            SchedulePolicy::Constant => LrSchedule::Constant,
            SchedulePolicy::Cosine => LrSchedule::Cosine { total_steps: total },
            SchedulePolicy::MultiStep { milestone_epochs, factor } => LrSchedule::MultiStep {
                milestones: milestone_epochs.iter().map(|&e| e * steps_per_epoch).collect(),
                factor: *factor,
            },
        }
    }
}

/// Optional corruption of calibration batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Severity handed to the Gaussian corruption, 1..=5.
    pub severity: u32,
    /// Probability that a given calibration batch is corrupted.
    pub probability: f64,
}

/// Everything the training loop needs beyond the model and the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Calibration interleave period `k`: one calibration step per `k` main
    /// steps.
    pub calib_period: usize,
    /// Annealing start value; 1 disables the scaling.
    pub beta0: f64,
    pub loss_main: HeadLoss,
    pub loss_calib: HeadLoss,
    pub lr_main: f64,
    pub lr_calib: f64,
    pub momentum: f64,
    pub weight_decay_main: f64,
    pub weight_decay_calib: f64,
    pub schedule: SchedulePolicy,
    pub augment: Option<AugmentConfig>,
    /// Bins used for the logged calibration metrics.
    pub n_bins: usize,
    /// Test-set metrics are computed every this many epochs (the final epoch
    /// is always evaluated).
    pub metric_cadence: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            calib_period: 5,
            beta0: 1.2,
            loss_main: HeadLoss::CrossEntropy,
            loss_calib: HeadLoss::CrossEntropy,
            lr_main: 0.001,
            lr_calib: 0.1,
            momentum: 0.9,
            weight_decay_main: 5e-4,
            weight_decay_calib: 1e-5,
            schedule: SchedulePolicy::Cosine,
            augment: None,
            n_bins: 15,
            metric_cadence: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive".to_string()));
        }
        if self.calib_period == 0 {
            return Err(Error::config("calibration period must be positive".to_string()));
        }
        if !(self.beta0.is_finite() && self.beta0 > 0.0) {
            return Err(Error::config(format!("beta0 must be finite and positive, got {}", self.beta0)));
        }
        for loss in [self.loss_main, self.loss_calib] {
            if let HeadLoss::Focal { gamma } = loss {
                if !(gamma.is_finite() && gamma >= 0.0) {
                    return Err(Error::config(format!("focal exponent must be finite and non-negative, got {gamma}")));
                }
            }
        }
        for (name, lr) in [("lr_main", self.lr_main), ("lr_calib", self.lr_calib)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(format!("{name} must be finite and positive, got {lr}")));
            }
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        for (name, wd) in [
            ("weight_decay_main", self.weight_decay_main),
            ("weight_decay_calib", self.weight_decay_calib),
        ] {
            if !(wd.is_finite() && wd >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and non-negative, got {wd}")));
            }
        }
        if let SchedulePolicy::MultiStep { milestone_epochs, factor } = &self.schedule {
            if !(factor.is_finite() && *factor > 0.0) {
                return Err(Error::config(format!("milestone factor must be finite and positive, got {factor}")));
            }
            if milestone_epochs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("milestone epochs must be strictly increasing".to_string()));
            }
        }
        if let Some(aug) = &self.augment {
            if !(1..=5).contains(&aug.severity) {
                return Err(Error::config(format!("augmentation severity must lie in 1..=5, got {}", aug.severity)));
            }
            if !(aug.probability.is_finite() && (0.0..=1.0).contains(&aug.probability)) {
                return Err(Error::config(format!(
                    "augmentation probability must lie in [0, 1], got {}",
                    aug.probability
                )));
            }
        }
        if self.n_bins == 0 {
            return Err(Error::config("need at least one bin".to_string()));
        }
        if self.metric_cadence == 0 {
            return Err(Error::config("metric cadence must be positive".to_string()));
        }
        Ok(())
    }
}

/// Test-set metrics for one head at one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub accuracy: f64,
    pub nll: f64,
    pub nll_clamped: usize,
    /// ECE over top-confidence entries.
    pub ece_max: f64,
    /// ECE over all class components.
    pub ece_all: f64,
    /// Binned estimate of the L2 calibration error (top confidence).
    pub ece2: f64,
    /// Mean Shannon entropy of the confidence vectors (nats).
    pub entropy: f64,
}

/// One epoch of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub n_main_steps: usize,
    /// `floor(steps_per_epoch / calib_period)` calibration updates.
    pub n_calib_steps: usize,
    /// Annealing factor at the first / last calibration step of the epoch;
    /// absent when the epoch had no calibration step.
    pub beta_first: Option<f64>,
    pub beta_last: Option<f64>,
    /// Mean main-head batch loss over the epoch.
    pub main_train_loss: f64,
    /// Mean calibration batch loss; absent when no calibration step ran.
    pub calib_train_loss: Option<f64>,
    /// Test metrics; present on metric-cadence epochs.
    pub main: Option<HeadMetrics>,
    pub calib: Option<HeadMetrics>,
    /// Aggregate wall-clock spent in main / calibration steps this epoch.
    pub main_step_ns: u64,
    pub calib_step_ns: u64,
}

/// Test-set metrics for one head of the model.
pub fn evaluate_head(model: &DoubleHeadModel, head: Head, data: &LabeledDataset, n_bins: usize) -> Result<HeadMetrics> {
    let logits = model.head_logits(head, data.features())?;
    let records = records_from_logits(&logits, data.labels())?;
    metrics_from_records(&records, n_bins)
}

/// The full metric set over a slice of prediction records.
pub fn metrics_from_records(records: &[crate::metrics::PredictionRecord], n_bins: usize) -> Result<HeadMetrics> {
    let max_bins = bin_records(records, n_bins, BinPopulation::MaxComponent)?;
    let all_bins = bin_records(records, n_bins, BinPopulation::AllComponents)?;
    let nll_summary = nll(records)?;
    Ok(HeadMetrics {
        accuracy: accuracy(records)?,
        nll: nll_summary.mean,
        nll_clamped: nll_summary.clamped,
        ece_max: ece(&max_bins),
        ece_all: ece(&all_bins),
        ece2: ece2_binned(&max_bins),
        entropy: confidence_entropy(records)?,
    })
}

/// Trains both heads in place and returns the per-epoch log.
pub fn train(model: &mut DoubleHeadModel, data: &Splits, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    train_with(model, data, cfg, |_| Ok(()))
}

/// [`train`] with a per-epoch callback (used to stream the log to disk).
pub fn train_with(
    model: &mut DoubleHeadModel,
    data: &Splits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    check_data(model, data)?;
    let train_set = &data.train;
    let calib_set = &data.calib;
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let anneal = AnnealSchedule::new(cfg.beta0, steps_per_epoch)?;
    let calib_per_epoch = steps_per_epoch / cfg.calib_period;

    let mut main_opt = Sgd::new(
        cfg.lr_main,
        cfg.momentum,
        cfg.weight_decay_main,
        cfg.schedule.resolve(steps_per_epoch, cfg.epochs),
    )?;
    let mut calib_opt = Sgd::new(
        cfg.lr_calib,
        cfg.momentum,
        cfg.weight_decay_calib,
        cfg.schedule.resolve(calib_per_epoch, cfg.epochs),
    )?;

    // Streams 0 and 1 seed the two heads' initializations.
    let mut shuffle_rng = stream_rng(cfg.seed, 2);
    let mut calib_rng = stream_rng(cfg.seed, 3);
    let mut augment_rng = stream_rng(cfg.seed, 4);

    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut main_step = 0usize;
    let mut calib_step = 0usize;

    // The calibration head trains at the edge of stability, so its last
    // iterate wanders around the loss basin. The returned head carries the
    // average of the final quarter of calibration steps (the logged per-epoch
    // metrics track the live iterate).
    let total_calib_steps = calib_per_epoch * cfg.epochs;
    let tail_start = total_calib_steps - total_calib_steps / 4;
    let mut tail = CalibTailAverage::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut main_loss_sum = 0.0;
        let mut calib_loss_sum = 0.0;
        let mut n_calib = 0usize;
        let mut beta_first = None;
        let mut beta_last = None;
        let mut main_ns = 0u64;
        let mut calib_ns = 0u64;

        for t in 1..=steps_per_epoch {
            let lo = (t - 1) * cfg.batch_size;
            let hi = (t * cfg.batch_size).min(train_set.len());
            let started = Instant::now();
            let (x, y) = train_set.rows(&order[lo..hi]);
            let (logits, cache) = model.main.forward(&x)?;
            let kind = cfg.loss_main.resolve(anneal.beta_at(t)?);
            let (loss, d_logits) = batch_loss_and_grad(kind, &logits, &y)?;
            let (grads, _) = model.main.backward(&cache, &d_logits)?;
            main_opt.step(&mut model.main, &grads, main_step)?;
            main_step += 1;
            main_ns += started.elapsed().as_nanos() as u64;
            if !loss.is_finite() {
                return Err(Error::usage(format!("training diverged: non-finite main loss at epoch {epoch} step {t}")));
            }
            main_loss_sum += loss;

            if t % cfg.calib_period == 0 {
                let started = Instant::now();
                let beta_t = anneal.beta_at(t)?;
                // Calibration steps run k times less often than main steps, so
                // they afford a steadier gradient: batches are drawn at twice
                // the training batch size (capped at the calibration set).
                let calib_batch = (2 * cfg.batch_size).min(calib_set.len());
                let idx: Vec<usize> =
                    (0..calib_batch).map(|_| calib_rng.random_range(0..calib_set.len())).collect();
                let (mut cx, cy) = calib_set.rows(&idx);
                if let Some(aug) = &cfg.augment {
                    if augment_rng.random::<f64>() < aug.probability {
                        cx = corrupt_features(&cx, aug.severity, &mut augment_rng)?;
                    }
                }
                // The calibration head sees the β_t-scaled main logits; the
                // dropped main cache keeps the backward pass on the
                // calibration head alone.
                let (z_calib, fwd) = model.calib_forward(&cx, beta_t, true)?;
                let kind = cfg.loss_calib.resolve(beta_t);
                let (closs, d_calib) = batch_loss_and_grad(kind, &z_calib, &cy)?;
                let cgrads = model.calib_backward(&fwd, &d_calib)?;
                calib_opt.step(&mut model.calib, &cgrads.calib, calib_step)?;
                calib_step += 1;
                if calib_step > tail_start {
                    tail.accumulate(&model.calib);
                }
                calib_ns += started.elapsed().as_nanos() as u64;
                if !closs.is_finite() {
                    return Err(Error::usage(format!(
                        "training diverged: non-finite calibration loss at epoch {epoch} step {t}"
                    )));
                }
                calib_loss_sum += closs;
                n_calib += 1;
                beta_first.get_or_insert(beta_t);
                beta_last = Some(beta_t);
            }
        }

        let evaluate = epoch % cfg.metric_cadence == 0 || epoch == cfg.epochs;
        let (main_metrics, calib_metrics) = if evaluate {
            (
                Some(evaluate_head(model, Head::Main, &data.test, cfg.n_bins)?),
                Some(evaluate_head(model, Head::Calib, &data.test, cfg.n_bins)?),
            )
        } else {
            (None, None)
        };

        let log = EpochLog {
            epoch,
            n_main_steps: steps_per_epoch,
            n_calib_steps: n_calib,
            beta_first,
            beta_last,
            main_train_loss: main_loss_sum / steps_per_epoch as f64,
            calib_train_loss: (n_calib > 0).then(|| calib_loss_sum / n_calib as f64),
            main: main_metrics,
            calib: calib_metrics,
            main_step_ns: main_ns,
            calib_step_ns: calib_ns,
        };
        on_epoch(&log)?;
        logs.push(log);
    }
    tail.write_into(&mut model.calib);
    Ok(logs)
}

/// Running mean of calibration-head parameters over the averaging tail.
struct CalibTailAverage {
    sums: Vec<(Array2<f64>, Array1<f64>)>,
    count: usize,
}

impl CalibTailAverage {
    fn new() -> CalibTailAverage {
        CalibTailAverage { sums: Vec::new(), count: 0 }
    }

    fn accumulate(&mut self, net: &DenseNet) {
        if self.sums.is_empty() {
            self.sums =
                net.layers().iter().map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len()))).collect();
        }
        for (sum, layer) in self.sums.iter_mut().zip(net.layers()) {
            sum.0 += &layer.weights;
            sum.1 += &layer.bias;
        }
        self.count += 1;
    }

    fn write_into(self, net: &mut DenseNet) {
        if self.count == 0 {
            return;
        }
        let scale = 1.0 / self.count as f64;
        for (sum, layer) in self.sums.into_iter().zip(net.layers_mut()) {
            layer.weights.assign(&(sum.0 * scale));
            layer.bias.assign(&(sum.1 * scale));
        }
    }
}

/// Fraction of training wall-clock spent on calibration steps: aggregate
/// calibration-step time over aggregate main-step time.
pub fn overhead_fraction(logs: &[EpochLog]) -> f64 {
    let main: u64 = logs.iter().map(|l| l.main_step_ns).sum();
    let calib: u64 = logs.iter().map(|l| l.calib_step_ns).sum();
    if main == 0 {
        0.0
    } else {
        calib as f64 / main as f64
    }
}

fn check_data(model: &DoubleHeadModel, data: &Splits) -> Result<()> {
    for (name, part) in [("train", &data.train), ("calib", &data.calib), ("test", &data.test)] {
        if part.dim() != model.input_dim() {
            return Err(Error::shape(format!(
                "{name} features have dim {}, model expects {}",
                part.dim(),
                model.input_dim()
            )));
        }
        if part.n_classes() != model.n_classes() {
            return Err(Error::config(format!(
                "{name} set has {} classes, model has {}",
                part.n_classes(),
                model.n_classes()
            )));
        }
    }
    Ok(())
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
