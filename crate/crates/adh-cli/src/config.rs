//! Versioned JSON experiment configuration: schema, defaults, validation,
//! and normalization.
//!
//! A config file may specify as little as `{"version": 1}`; every other
//! field has a documented default. `validate_config` parses, validates, and
//! returns the normalized spec — all defaults filled in — whose JSON echo
//! re-validates to itself byte-for-byte. Unknown keys anywhere are errors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use adh_core::dataset::SplitSpec;
use adh_core::oracles::Theorem2Grid;
use adh_core::trainer::{AugmentConfig, HeadLoss, SchedulePolicy, TrainConfig};

/// Schema version this build understands.
pub const CONFIG_VERSION: u32 = 1;

/// Default spread of the synthetic Gaussian mixture.
///
/// Together with the default feature dimension this pins the benchmark task:
/// five features keep the main-head logit manifold narrow enough for the
/// bottlenecked calibration head to track it, and unit spread leaves enough
/// class overlap that the main head's overconfidence is visible.
pub const DEFAULT_SPREAD: f64 = 1.0;

/// Which experiment a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// One training run with full per-head artifacts.
    Train,
    /// Retrains across an annealing-start grid.
    BetaSweep,
    /// Retrains across a calibration-period grid, measuring overhead.
    KSweep,
    /// Trains once, then scores shifted test sets by confidence AUROC.
    ShiftAuroc,
    /// Randomized gradient-ratio identity check and bound census.
    Theorem1,
    /// Exhaustive two-point census of the L2 calibration-error bound.
    Theorem2,
    /// Finite-difference verification of loss and network gradients.
    Gradcheck,
}

impl ExperimentKind {
    /// All kinds, in the order used for documentation.
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Train,
        ExperimentKind::BetaSweep,
        ExperimentKind::KSweep,
        ExperimentKind::ShiftAuroc,
        ExperimentKind::Theorem1,
        ExperimentKind::Theorem2,
        ExperimentKind::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::BetaSweep => "beta_sweep",
            ExperimentKind::KSweep => "k_sweep",
            ExperimentKind::ShiftAuroc => "shift_auroc",
            ExperimentKind::Theorem1 => "theorem1",
            ExperimentKind::Theorem2 => "theorem2",
            ExperimentKind::Gradcheck => "gradcheck",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<ExperimentKind, String> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment {s:?}; expected one of train, beta_sweep, k_sweep, shift_auroc, theorem1, theorem2, gradcheck"))
    }
}

/// Where the dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// `"gaussian_mixture"` (synthetic) or `"csv"` (load from `path`).
    pub kind: String,
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    /// Synthetic only: samples drawn per class.
    #[serde(default = "default_samples_per_class")]
    pub samples_per_class: usize,
    /// Synthetic only: feature dimension.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Synthetic only: within-class standard deviation around each center.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// CSV only: file to load (`.gz` transparently decompressed).
    #[serde(default)]
    pub path: Option<String>,
}

fn default_n_classes() -> usize {
    10
}

fn default_samples_per_class() -> usize {
    450
}

fn default_dim() -> usize {
    5
}

fn default_spread() -> f64 {
    DEFAULT_SPREAD
}

impl Default for SourceSpec {
    fn default() -> SourceSpec {
        SourceSpec {
            kind: "gaussian_mixture".to_string(),
            n_classes: default_n_classes(),
            samples_per_class: default_samples_per_class(),
            dim: default_dim(),
            spread: default_spread(),
            path: None,
        }
    }
}

/// Dataset source plus the train/calibration/test split fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
}

fn default_split() -> SplitSpec {
    SplitSpec { train: 4.0 / 9.0, calib: 1.0 / 9.0, test: 4.0 / 9.0 }
}

impl Default for DatasetSpec {
    fn default() -> DatasetSpec {
        DatasetSpec { source: SourceSpec::default(), split: default_split() }
    }
}

/// Main-head architecture; the calibration head is always `n -> ceil(n/2) -> n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_hidden")]
    pub main_hidden: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl Default for ModelSpec {
    fn default() -> ModelSpec {
        ModelSpec { main_hidden: default_hidden() }
    }
}

/// Per-head loss selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    /// `"ce"`, `"brier"`, `"focal"`, or `"adh"`.
    pub kind: String,
    /// Focal exponent; only read when `kind` is `"focal"`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    adh_core::losses::DEFAULT_FOCAL_GAMMA
}

impl Default for LossSpec {
    fn default() -> LossSpec {
        LossSpec { kind: "ce".to_string(), gamma: default_gamma() }
    }
}

impl LossSpec {
    /// Resolves the name to the trainer's loss selector. `field` names the
    /// config location in error messages.
    pub fn to_head_loss(&self, field: &str) -> Result<HeadLoss, String> {
        match self.kind.as_str() {
            "ce" => Ok(HeadLoss::CrossEntropy),
            "brier" => Ok(HeadLoss::Brier),
            "focal" => Ok(HeadLoss::Focal { gamma: self.gamma }),
            "adh" => Ok(HeadLoss::Annealed),
            other => Err(format!("{field}.kind: unknown loss {other:?}; expected ce, brier, focal, or adh")),
        }
    }
}

/// Learning-rate schedule selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    /// `"cosine"`, `"constant"`, or `"multi_step"`.
    pub kind: String,
    /// Multi-step only: epochs at which the rate drops.
    #[serde(default)]
    pub milestone_epochs: Vec<usize>,
    /// Multi-step only: multiplicative drop factor.
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_factor() -> f64 {
    0.1
}

impl Default for ScheduleSpec {
    fn default() -> ScheduleSpec {
        ScheduleSpec { kind: "cosine".to_string(), milestone_epochs: Vec::new(), factor: default_factor() }
    }
}

impl ScheduleSpec {
    pub fn to_policy(&self) -> Result<SchedulePolicy, String> {
        match self.kind.as_str() {
            "cosine" => Ok(SchedulePolicy::Cosine),
            "constant" => Ok(SchedulePolicy::Constant),
            "multi_step" => Ok(SchedulePolicy::MultiStep {
                milestone_epochs: self.milestone_epochs.clone(),
                factor: self.factor,
            }),
            other => {
                Err(format!("train.schedule.kind: unknown schedule {other:?}; expected cosine, constant, or multi_step"))
            }
        }
    }
}

/// Training-loop parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Calibration interleave period `k`.
    #[serde(default = "default_calib_period")]
    pub calib_period: usize,
    /// Annealing start factor.
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default)]
    pub loss: LossSpec,
    /// Calibration-head loss; plain cross-entropy unless overridden.
    #[serde(default)]
    pub loss_calib: LossSpec,
    #[serde(default = "default_lr_main")]
    pub lr_main: f64,
    /// Defaults to `100 * lr_main` when absent. The calibration head sits
    /// near its stability ceiling around `0.1` at the default batch size;
    /// much beyond that it collapses toward the uniform distribution.
    #[serde(default)]
    pub lr_calib: Option<f64>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd_main")]
    pub weight_decay_main: f64,
    #[serde(default = "default_wd_calib")]
    pub weight_decay_calib: f64,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// Optional corruption of calibration batches.
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
    /// Reliability bins for logged and reported metrics.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Epoch period of test-set metric evaluation.
    #[serde(default = "default_metric_cadence")]
    pub metric_cadence: usize,
}

fn default_epochs() -> usize {
    200
}

fn default_batch_size() -> usize {
    64
}

fn default_calib_period() -> usize {
    5
}

fn default_beta0() -> f64 {
    1.2
}

fn default_lr_main() -> f64 {
    0.001
}

fn default_momentum() -> f64 {
    0.9
}

fn default_wd_main() -> f64 {
    5e-4
}

fn default_wd_calib() -> f64 {
    1e-5
}

fn default_bins() -> usize {
    15
}

fn default_metric_cadence() -> usize {
    1
}

impl Default for TrainSpec {
    fn default() -> TrainSpec {
        TrainSpec {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            calib_period: default_calib_period(),
            beta0: default_beta0(),
            loss: LossSpec::default(),
            loss_calib: LossSpec::default(),
            lr_main: default_lr_main(),
            lr_calib: None,
            momentum: default_momentum(),
            weight_decay_main: default_wd_main(),
            weight_decay_calib: default_wd_calib(),
            schedule: ScheduleSpec::default(),
            augment: None,
            bins: default_bins(),
            metric_cadence: default_metric_cadence(),
        }
    }
}

impl TrainSpec {
    /// The calibration-head rate, applying the 100x default ratio.
    pub fn resolved_lr_calib(&self) -> f64 {
        self.lr_calib.unwrap_or(100.0 * self.lr_main)
    }

    /// Converts to the trainer's config (all name resolution done).
    pub fn to_train_config(&self, seed: u64) -> Result<TrainConfig, String> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            calib_period: self.calib_period,
            beta0: self.beta0,
            loss_main: self.loss.to_head_loss("train.loss")?,
            loss_calib: self.loss_calib.to_head_loss("train.loss_calib")?,
            lr_main: self.lr_main,
            lr_calib: self.resolved_lr_calib(),
            momentum: self.momentum,
            weight_decay_main: self.weight_decay_main,
            weight_decay_calib: self.weight_decay_calib,
            schedule: self.schedule.to_policy()?,
            augment: self.augment,
            n_bins: self.bins,
            metric_cadence: self.metric_cadence,
            seed,
        })
    }
}

/// Grids for the sweep and shift experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Annealing starts retrained by `beta_sweep`, in report order.
    #[serde(default = "default_beta0_grid")]
    pub beta0_grid: Vec<f64>,
    /// Calibration periods retrained by `k_sweep`, in report order.
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<usize>,
    /// Corruption severities scored by `shift_auroc`.
    #[serde(default = "default_severities")]
    pub severities: Vec<u32>,
    /// Slope of the linear severity grid: noise σ is
    /// `sigma_per_severity * severity` of each feature's standard deviation.
    #[serde(default = "default_sigma_per_severity")]
    pub sigma_per_severity: f64,
    /// Whether `shift_auroc` also scores a foreign mixture.
    #[serde(default = "default_true")]
    pub include_ood: bool,
}

fn default_sigma_per_severity() -> f64 {
    adh_core::dataset::DEFAULT_SIGMA_PER_SEVERITY
}

fn default_beta0_grid() -> Vec<f64> {
    vec![0.1, 0.6, 1.0, 1.2, 1.5, 2.0]
}

fn default_k_grid() -> Vec<usize> {
    vec![5, 10, 35, 70]
}

fn default_severities() -> Vec<u32> {
    vec![1, 3, 5]
}

fn default_true() -> bool {
    true
}

impl Default for SweepSpec {
    fn default() -> SweepSpec {
        SweepSpec {
            beta0_grid: default_beta0_grid(),
            k_grid: default_k_grid(),
            severities: default_severities(),
            sigma_per_severity: default_sigma_per_severity(),
            include_ood: default_true(),
        }
    }
}

/// Ranges for the randomized gradient-ratio check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem1Spec {
    pub trials: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for Theorem1Spec {
    fn default() -> Theorem1Spec {
        Theorem1Spec { trials: 10_000, n_min: 2, n_max: 10, beta_min: 0.5, beta_max: 2.0 }
    }
}

/// Finite-difference suite sizing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSpec {
    /// Random cases per loss kind and for the network suite.
    pub cases: usize,
    pub step: f64,
    /// Relative tolerance for loss-vs-logit gradients.
    pub tolerance_loss: f64,
    /// Relative tolerance for network parameter gradients.
    pub tolerance_net: f64,
}

impl Default for GradcheckSpec {
    fn default() -> GradcheckSpec {
        GradcheckSpec { cases: 100, step: 1e-5, tolerance_loss: 1e-6, tolerance_net: 1e-4 }
    }
}

/// The full experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Must equal [`CONFIG_VERSION`].
    pub version: u32,
    #[serde(default = "default_experiment")]
    pub experiment: ExperimentKind,
    /// Single top-level seed; every randomized component derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub theorem1: Theorem1Spec,
    #[serde(default)]
    pub theorem2: Theorem2Grid,
    #[serde(default)]
    pub gradcheck: GradcheckSpec,
}

fn default_experiment() -> ExperimentKind {
    ExperimentKind::Train
}

fn default_out_dir() -> String {
    "out".to_string()
}

impl Default for ExperimentSpec {
    fn default() -> ExperimentSpec {
        ExperimentSpec {
            version: CONFIG_VERSION,
            experiment: default_experiment(),
            seed: 0,
            out_dir: default_out_dir(),
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            sweep: SweepSpec::default(),
            theorem1: Theorem1Spec::default(),
            theorem2: Theorem2Grid::default(),
            gradcheck: GradcheckSpec::default(),
        }
    }
}

impl ExperimentSpec {
    /// Collects every validation problem; empty means the spec is runnable.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.version != CONFIG_VERSION {
            errs.push(format!("version: expected {CONFIG_VERSION}, got {}", self.version));
        }
        if self.out_dir.is_empty() {
            errs.push("out_dir: must not be empty".to_string());
        }
        let src = &self.dataset.source;
        match src.kind.as_str() {
            "gaussian_mixture" => {
                if src.path.is_some() {
                    errs.push("dataset.source.path: only valid for kind \"csv\"".to_string());
                }
                if src.n_classes < 2 {
                    errs.push(format!("dataset.source.n_classes: need at least 2, got {}", src.n_classes));
                }
                if src.samples_per_class == 0 {
                    errs.push("dataset.source.samples_per_class: must be positive".to_string());
                }
                if src.dim == 0 {
                    errs.push("dataset.source.dim: must be positive".to_string());
                }
                if !(src.spread.is_finite() && src.spread >= 0.0) {
                    errs.push(format!("dataset.source.spread: must be finite and non-negative, got {}", src.spread));
                }
            }
            "csv" => {
                if src.path.is_none() {
                    errs.push("dataset.source.path: required for kind \"csv\"".to_string());
                }
                if src.n_classes < 2 {
                    errs.push(format!("dataset.source.n_classes: need at least 2, got {}", src.n_classes));
                }
            }
            other => {
                errs.push(format!("dataset.source.kind: unknown kind {other:?}; expected gaussian_mixture or csv"));
            }
        }
        if let Err(e) = self.dataset.split.validate() {
            errs.push(format!("dataset.split: {e}"));
        }
        if self.model.main_hidden.iter().any(|&w| w == 0) {
            errs.push("model.main_hidden: layer widths must be positive".to_string());
        }
        match self.train.to_train_config(self.seed) {
            Ok(cfg) => {
                if let Err(e) = cfg.validate() {
                    errs.push(format!("train: {e}"));
                }
            }
            Err(e) => errs.push(e),
        }
        if let Some(lr) = self.train.lr_calib {
            if !(lr.is_finite() && lr > 0.0) {
                errs.push(format!("train.lr_calib: must be finite and positive, got {lr}"));
            }
        }
        if self.sweep.beta0_grid.is_empty() {
            errs.push("sweep.beta0_grid: must not be empty".to_string());
        }
        if self.sweep.beta0_grid.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
            errs.push("sweep.beta0_grid: entries must be finite and positive".to_string());
        }
        if self.sweep.k_grid.is_empty() {
            errs.push("sweep.k_grid: must not be empty".to_string());
        }
        if self.sweep.k_grid.contains(&0) {
            errs.push("sweep.k_grid: entries must be positive".to_string());
        }
        if self.sweep.severities.iter().any(|s| !(1..=5).contains(s)) {
            errs.push("sweep.severities: entries must lie in 1..=5".to_string());
        }
        if !(self.sweep.sigma_per_severity.is_finite() && self.sweep.sigma_per_severity >= 0.0) {
            errs.push(format!(
                "sweep.sigma_per_severity: must be finite and non-negative, got {}",
                self.sweep.sigma_per_severity
            ));
        }
        let t1 = &self.theorem1;
        if t1.trials == 0 {
            errs.push("theorem1.trials: must be positive".to_string());
        }
        if t1.n_min < 2 || t1.n_min > t1.n_max {
            errs.push(format!("theorem1: class range {}..={} invalid", t1.n_min, t1.n_max));
        }
        if !(t1.beta_min.is_finite() && t1.beta_max.is_finite() && 0.0 < t1.beta_min && t1.beta_min <= t1.beta_max) {
            errs.push(format!("theorem1: beta range {}..={} invalid", t1.beta_min, t1.beta_max));
        }
        if let Err(e) = self.theorem2.validate() {
            errs.push(format!("theorem2: {e}"));
        }
        let gc = &self.gradcheck;
        if gc.cases == 0 {
            errs.push("gradcheck.cases: must be positive".to_string());
        }
        if !(gc.step.is_finite() && gc.step > 0.0) {
            errs.push(format!("gradcheck.step: must be finite and positive, got {}", gc.step));
        }
        for (name, tol) in [("tolerance_loss", gc.tolerance_loss), ("tolerance_net", gc.tolerance_net)] {
            if !(tol.is_finite() && tol > 0.0) {
                errs.push(format!("gradcheck.{name}: must be finite and positive, got {tol}"));
            }
        }
        errs
    }

    /// The spec with every implicit default made explicit, so its echo
    /// re-validates to itself.
    pub fn normalized(&self) -> ExperimentSpec {
        let mut spec = self.clone();
        spec.train.lr_calib = Some(spec.train.resolved_lr_calib());
        spec
    }
}

/// Parses and validates a JSON config, returning the normalized spec or
/// every problem found.
pub fn validate_config(text: &str) -> Result<ExperimentSpec, Vec<String>> {
    let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| vec![format!("config parse: {e}")])?;
    let problems = spec.problems();
    if problems.is_empty() {
        Ok(spec.normalized())
    } else {
        Err(problems)
    }
}
