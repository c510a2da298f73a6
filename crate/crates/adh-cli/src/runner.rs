//! Executes a validated experiment spec and writes its artifact files.
//!
//! Every run writes a normalized config echo first, then its
//! experiment-specific artifacts, each through a write-then-rename so a
//! crash never leaves a partial file. All metric JSON files contain only
//! deterministic values — wall-clock measurements appear solely in
//! `epochs.jsonl` and `k_sweep.csv` — so rerunning a config reproduces the
//! metric files byte for byte.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};

use adh_core::dataset::{corrupt_gaussian_scaled, gen_gaussian_mixture, load_csv, split, LabeledDataset, Splits};
use adh_core::doublehead::{DoubleHeadModel, Head};
use adh_core::fsutil::atomic_write_bytes;
use adh_core::metrics::{
    auroc, bin_records, records_from_logits, top_confidences, write_confidence_histogram_csv, write_records_jsonl,
    write_reliability_csv, BinPopulation, PredictionRecord,
};
use adh_core::oracles::{
    check_theorem1, run_gradcheck_suite, theorem2_census, EntropySign, GradCheckSuiteConfig, GradCheckSuiteReport,
    Theorem1Config, Theorem1Report, Theorem2Summary,
};
use adh_core::postproc::{fit_temperature, TemperatureFit};
use adh_core::trainer::{
    metrics_from_records, overhead_fraction, train, EpochLog, HeadMetrics, TrainConfig,
};

use crate::config::{ExperimentKind, ExperimentSpec};

/// Why a run stopped; carries its own process exit code.
#[derive(Debug)]
pub enum RunError {
    /// The spec does not validate; one message per problem.
    Config(Vec<String>),
    /// The spec validates but execution failed.
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(problems) => {
                writeln!(f, "invalid configuration:")?;
                for p in problems {
                    writeln!(f, "  - {p}")?;
                }
                Ok(())
            }
            RunError::Runtime(msg) => write!(f, "runtime failure: {msg}"),
        }
    }
}

impl From<adh_core::Error> for RunError {
    fn from(e: adh_core::Error) -> RunError {
        RunError::Runtime(e.to_string())
    }
}

/// What a completed run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub experiment: ExperimentKind,
    pub out_dir: PathBuf,
    /// File names written inside `out_dir`, in write order.
    pub files: Vec<String>,
}

// Seed-derivation domains: every randomized component gets its own stream
// derived from the single top-level seed.
const DOMAIN_DATA: u64 = 1;
const DOMAIN_SPLIT: u64 = 2;
const DOMAIN_MODEL: u64 = 3;
const DOMAIN_TRAIN: u64 = 4;
const DOMAIN_OOD: u64 = 5;
const DOMAIN_CORRUPT: u64 = 6;
const DOMAIN_THEOREM1: u64 = 7;
const DOMAIN_GRADCHECK: u64 = 8;

/// SplitMix64 finalizer over the seed and a domain tag.
fn sub_seed(seed: u64, domain: u64) -> u64 {
    let mut z = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the experiment the spec names, writing artifacts to its output
/// directory.
pub fn run(spec: &ExperimentSpec) -> Result<RunSummary, RunError> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(RunError::Config(problems));
    }
    let spec = spec.normalized();
    let out_dir = PathBuf::from(&spec.out_dir);
    fs::create_dir_all(&out_dir).map_err(|e| RunError::Runtime(format!("create {}: {e}", out_dir.display())))?;
    let mut files = Vec::new();
    write_json(&out_dir, "config.json", &spec, &mut files)?;
    match spec.experiment {
        ExperimentKind::Train => run_train(&spec, &out_dir, &mut files)?,
        ExperimentKind::BetaSweep => run_beta_sweep(&spec, &out_dir, &mut files)?,
        ExperimentKind::KSweep => run_k_sweep(&spec, &out_dir, &mut files)?,
        ExperimentKind::ShiftAuroc => run_shift_auroc(&spec, &out_dir, &mut files)?,
        ExperimentKind::Theorem1 => run_theorem1(&spec, &out_dir, &mut files)?,
        ExperimentKind::Theorem2 => run_theorem2(&spec, &out_dir, &mut files)?,
        ExperimentKind::Gradcheck => run_gradcheck(&spec, &out_dir, &mut files)?,
    }
    Ok(RunSummary { experiment: spec.experiment, out_dir, files })
}

fn runtime<E: fmt::Display>(e: E) -> RunError {
    RunError::Runtime(e.to_string())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, files: &mut Vec<String>) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    atomic_write_bytes(&dir.join(name), text.as_bytes())?;
    files.push(name.to_string());
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str, files: &mut Vec<String>) -> Result<(), RunError> {
    atomic_write_bytes(&dir.join(name), text.as_bytes())?;
    files.push(name.to_string());
    Ok(())
}

/// Builds the dataset named by the spec and splits it.
fn build_splits(spec: &ExperimentSpec) -> Result<Splits, RunError> {
    let src = &spec.dataset.source;
    let data = match src.kind.as_str() {
        "gaussian_mixture" => gen_gaussian_mixture(
            src.n_classes,
            src.samples_per_class,
            src.dim,
            src.spread,
            sub_seed(spec.seed, DOMAIN_DATA),
        )?,
        "csv" => {
            let path = src.path.as_deref().ok_or_else(|| RunError::Config(vec!["dataset.source.path: required".into()]))?;
            load_csv(Path::new(path), src.n_classes)?
        }
        other => return Err(RunError::Config(vec![format!("dataset.source.kind: unknown kind {other:?}")])),
    };
    Ok(split(&data, &spec.dataset.split, sub_seed(spec.seed, DOMAIN_SPLIT))?)
}

fn fresh_model(spec: &ExperimentSpec, splits: &Splits) -> Result<DoubleHeadModel, RunError> {
    Ok(DoubleHeadModel::new(
        splits.train.dim(),
        &spec.model.main_hidden,
        splits.train.n_classes(),
        sub_seed(spec.seed, DOMAIN_MODEL),
    )?)
}

fn base_train_config(spec: &ExperimentSpec) -> Result<TrainConfig, RunError> {
    spec.train.to_train_config(sub_seed(spec.seed, DOMAIN_TRAIN)).map_err(|e| RunError::Config(vec![e]))
}

/// Per-head final evaluation: raw and temperature-scaled test metrics, the
/// fit itself, and the raw test records.
struct HeadEval {
    raw: HeadMetrics,
    scaled: HeadMetrics,
    fit: TemperatureFit,
    records: Vec<PredictionRecord>,
}

fn evaluate_with_ts(model: &DoubleHeadModel, head: Head, splits: &Splits, bins: usize) -> Result<HeadEval, RunError> {
    let test_logits = model.head_logits(head, splits.test.features())?;
    let records = records_from_logits(&test_logits, splits.test.labels())?;
    let raw = metrics_from_records(&records, bins)?;
    let calib_logits = model.head_logits(head, splits.calib.features())?;
    let fit = fit_temperature(&calib_logits, splits.calib.labels())?;
    let scaled_logits = &test_logits / fit.temperature;
    let scaled_records = records_from_logits(&scaled_logits, splits.test.labels())?;
    let scaled = metrics_from_records(&scaled_records, bins)?;
    Ok(HeadEval { raw, scaled, fit, records })
}

/// `metrics.json` for a plain training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainMetricsDoc {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub main: HeadMetrics,
    pub calib: HeadMetrics,
    /// Main head after temperature scaling fitted on the calibration set.
    pub main_ts: HeadMetrics,
    pub calib_ts: HeadMetrics,
    pub temperature: TemperatureDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemperatureDoc {
    pub main: TemperatureFit,
    pub calib: TemperatureFit,
}

fn run_train(spec: &ExperimentSpec, dir: &Path, files: &mut Vec<String>) -> Result<(), RunError> {
    let splits = build_splits(spec)?;
    let cfg = base_train_config(spec)?;
    let mut model = fresh_model(spec, &splits)?;
    let logs = train(&mut model, &splits, &cfg)?;
    let mut jsonl = String::new();
    for log in &logs {
        jsonl.push_str(&serde_json::to_string(log).map_err(runtime)?);
        jsonl.push('\n');
    }
    write_text(dir, "epochs.jsonl", &jsonl, files)?;
    let main = evaluate_with_ts(&model, Head::Main, &splits, spec.train.bins)?;
    let calib = evaluate_with_ts(&model, Head::Calib, &splits, spec.train.bins)?;
    let doc = TrainMetricsDoc {
        experiment: spec.experiment,
        seed: spec.seed,
        main: main.raw,
        calib: calib.raw,
        main_ts: main.scaled,
        calib_ts: calib.scaled,
        temperature: TemperatureDoc { main: main.fit, calib: calib.fit },
    };
    write_json(dir, "metrics.json", &doc, files)?;
    for (name, eval) in [("main", &main), ("calib", &calib)] {
        let binned = bin_records(&eval.records, spec.train.bins, BinPopulation::MaxComponent)?;
        let rel = format!("reliability_{name}.csv");
        write_reliability_csv(&dir.join(&rel), &binned)?;
        files.push(rel);
        let hist = format!("confidence_hist_{name}.csv");
        write_confidence_histogram_csv(&dir.join(&hist), &binned)?;
        files.push(hist);
        let preds = format!("predictions_{name}.jsonl");
        write_records_jsonl(&dir.join(&preds), &eval.records)?;
        files.push(preds);
    }
    model.save(&dir.join("model.json"))?;
    files.push("model.json".to_string());
    Ok(())
}

/// One retrained grid point of a `beta_sweep`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BetaSweepRow {
    pub beta0: f64,
    pub accuracy_main: f64,
    pub accuracy_calib: f64,
    pub ece_max_main: f64,
    pub ece_max_calib: f64,
    pub entropy_main: f64,
    pub entropy_calib: f64,
    pub nll_main: f64,
    pub nll_calib: f64,
}

/// `metrics.json` for a `beta_sweep`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaSweepMetricsDoc {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub rows: Vec<BetaSweepRow>,
}

/// Trains a fresh model and returns the final test metrics of both heads.
fn train_and_eval(
    spec: &ExperimentSpec,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<(HeadMetrics, HeadMetrics, Vec<EpochLog>), RunError> {
    let mut model = fresh_model(spec, splits)?;
    let logs = train(&mut model, splits, cfg)?;
    let main = final_head_metrics(&model, Head::Main, splits, cfg.n_bins)?;
    let calib = final_head_metrics(&model, Head::Calib, splits, cfg.n_bins)?;
    Ok((main, calib, logs))
}

fn final_head_metrics(
    model: &DoubleHeadModel,
    head: Head,
    splits: &Splits,
    bins: usize,
) -> Result<HeadMetrics, RunError> {
    let logits = model.head_logits(head, splits.test.features())?;
    let records = records_from_logits(&logits, splits.test.labels())?;
    Ok(metrics_from_records(&records, bins)?)
}

/// Evaluation only at the final epoch: sweep points don't need the per-epoch
/// metric trace.
fn final_only(cfg: &TrainConfig) -> TrainConfig {
    let mut cfg = cfg.clone();
    cfg.metric_cadence = cfg.epochs.max(1);
    cfg
}

fn run_beta_sweep(spec: &ExperimentSpec, dir: &Path, files: &mut Vec<String>) -> Result<(), RunError> {
    let splits = build_splits(spec)?;
    let base = final_only(&base_train_config(spec)?);
    let rows = thread::scope(|scope| -> Result<Vec<BetaSweepRow>, RunError> {
        let handles: Vec<_> = spec
            .sweep
            .beta0_grid
            .iter()
            .map(|&beta0| {
                let splits = &splits;
                let base = &base;
                scope.spawn(move || -> Result<BetaSweepRow, RunError> {
                    let mut cfg = base.clone();
                    cfg.beta0 = beta0;
                    let (main, calib, _) = train_and_eval(spec, splits, &cfg)?;
                    Ok(BetaSweepRow {
                        beta0,
                        accuracy_main: main.accuracy,
                        accuracy_calib: calib.accuracy,
                        ece_max_main: main.ece_max,
                        ece_max_calib: calib.ece_max,
                        entropy_main: main.entropy,
                        entropy_calib: calib.entropy,
                        nll_main: main.nll,
                        nll_calib: calib.nll,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| RunError::Runtime("sweep worker panicked".to_string()))?)
            .collect()
    })?;
    let mut csv = String::from(
        "beta0,accuracy_main,accuracy_calib,ece_max_main,ece_max_calib,entropy_main,entropy_calib,nll_main,nll_calib\n",
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.beta0,
            r.accuracy_main,
            r.accuracy_calib,
            r.ece_max_main,
            r.ece_max_calib,
            r.entropy_main,
            r.entropy_calib,
            r.nll_main,
            r.nll_calib
        )
        .expect("string write");
    }
    write_text(dir, "beta_sweep.csv", &csv, files)?;
    let doc = BetaSweepMetricsDoc { experiment: spec.experiment, seed: spec.seed, rows };
    write_json(dir, "metrics.json", &doc, files)?;
    Ok(())
}

/// One retrained grid point of a `k_sweep` as written to the CSV (overhead
/// is a wall-clock measurement and appears only here).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub overhead: f64,
    pub accuracy_main: f64,
    pub accuracy_calib: f64,
    pub ece_max_main: f64,
    pub ece_max_calib: f64,
    pub entropy_calib: f64,
}

/// The deterministic part of a `k_sweep` row, used in `metrics.json`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KSweepMetricsRow {
    pub k: usize,
    pub accuracy_main: f64,
    pub accuracy_calib: f64,
    pub ece_max_main: f64,
    pub ece_max_calib: f64,
    pub entropy_calib: f64,
}

/// `metrics.json` for a `k_sweep`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KSweepMetricsDoc {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub rows: Vec<KSweepMetricsRow>,
}

fn run_k_sweep(spec: &ExperimentSpec, dir: &Path, files: &mut Vec<String>) -> Result<(), RunError> {
    let splits = build_splits(spec)?;
    let base = final_only(&base_train_config(spec)?);
    // Sequential on purpose: overhead is a timing measurement and competing
    // workers would distort it.
    let mut rows = Vec::with_capacity(spec.sweep.k_grid.len());
    for &k in &spec.sweep.k_grid {
        let mut cfg = base.clone();
        cfg.calib_period = k;
        let (main, calib, logs) = train_and_eval(spec, &splits, &cfg)?;
        rows.push(KSweepRow {
            k,
            overhead: overhead_fraction(&logs),
            accuracy_main: main.accuracy,
            accuracy_calib: calib.accuracy,
            ece_max_main: main.ece_max,
            ece_max_calib: calib.ece_max,
            entropy_calib: calib.entropy,
        });
    }
    let mut csv = String::from("k,overhead,accuracy_main,accuracy_calib,ece_max_main,ece_max_calib,entropy_calib\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.k, r.overhead, r.accuracy_main, r.accuracy_calib, r.ece_max_main, r.ece_max_calib, r.entropy_calib
        )
        .expect("string write");
    }
    write_text(dir, "k_sweep.csv", &csv, files)?;
    let doc = KSweepMetricsDoc {
        experiment: spec.experiment,
        seed: spec.seed,
        rows: rows
            .iter()
            .map(|r| KSweepMetricsRow {
                k: r.k,
                accuracy_main: r.accuracy_main,
                accuracy_calib: r.accuracy_calib,
                ece_max_main: r.ece_max_main,
                ece_max_calib: r.ece_max_calib,
                entropy_calib: r.entropy_calib,
            })
            .collect(),
    };
    write_json(dir, "metrics.json", &doc, files)?;
    Ok(())
}

/// One shifted-set AUROC measurement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AurocRow {
    /// `severity_<s>` for Gaussian corruption, `ood` for the foreign mixture.
    pub source: String,
    /// `main` or `calib`.
    pub head: String,
    /// `raw` or `ts` (temperature-scaled).
    pub scoring: String,
    pub auroc: f64,
}

/// `metrics.json` for a `shift_auroc` run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShiftAurocMetricsDoc {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub rows: Vec<AurocRow>,
}

fn run_shift_auroc(spec: &ExperimentSpec, dir: &Path, files: &mut Vec<String>) -> Result<(), RunError> {
    let splits = build_splits(spec)?;
    let cfg = final_only(&base_train_config(spec)?);
    let mut model = fresh_model(spec, &splits)?;
    train(&mut model, &splits, &cfg)?;
    // Per-head temperatures fitted on the calibration set.
    let heads = [(Head::Main, "main"), (Head::Calib, "calib")];
    let mut fits = Vec::new();
    for &(head, _) in &heads {
        let calib_logits = model.head_logits(head, splits.calib.features())?;
        fits.push(fit_temperature(&calib_logits, splits.calib.labels())?);
    }
    // Top-confidence scores for one dataset under every head x scoring.
    let scores_for = |data: &LabeledDataset| -> Result<Vec<Vec<f64>>, RunError> {
        let mut out = Vec::with_capacity(4);
        for (i, &(head, _)) in heads.iter().enumerate() {
            let logits = model.head_logits(head, data.features())?;
            out.push(top_confidences(&records_from_logits(&logits, data.labels())?));
            let scaled = &logits / fits[i].temperature;
            out.push(top_confidences(&records_from_logits(&scaled, data.labels())?));
        }
        Ok(out)
    };
    let in_dist = scores_for(&splits.test)?;
    let mut shifted_sets: Vec<(String, LabeledDataset)> = Vec::new();
    for &severity in &spec.sweep.severities {
        let corrupted = corrupt_gaussian_scaled(
            &splits.test,
            severity,
            spec.sweep.sigma_per_severity,
            sub_seed(spec.seed, DOMAIN_CORRUPT + u64::from(severity)),
        )?;
        shifted_sets.push((format!("severity_{severity}"), corrupted));
    }
    if spec.sweep.include_ood {
        let src = &spec.dataset.source;
        let ood = gen_gaussian_mixture(
            splits.test.n_classes(),
            src.samples_per_class,
            splits.test.dim(),
            src.spread,
            sub_seed(spec.seed, DOMAIN_OOD),
        )?;
        shifted_sets.push(("ood".to_string(), ood));
    }
    let mut rows = Vec::new();
    for (source, data) in &shifted_sets {
        let shifted = scores_for(data)?;
        for (i, &(_, head_name)) in heads.iter().enumerate() {
            for (j, scoring) in ["raw", "ts"].iter().enumerate() {
                let idx = 2 * i + j;
                rows.push(AurocRow {
                    source: source.clone(),
                    head: head_name.to_string(),
                    scoring: (*scoring).to_string(),
                    auroc: auroc(&in_dist[idx], &shifted[idx])?,
                });
            }
        }
    }
    let mut csv = String::from("source,head,scoring,auroc\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.source, r.head, r.scoring, r.auroc).expect("string write");
    }
    write_text(dir, "auroc.csv", &csv, files)?;
    let doc = ShiftAurocMetricsDoc { experiment: spec.experiment, seed: spec.seed, rows };
    write_json(dir, "metrics.json", &doc, files)?;
    Ok(())
}

/// `theorem1.json`: the identity check and bound census report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Theorem1Doc {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub report: Theorem1Report,
}

fn run_theorem1(spec: &ExperimentSpec, dir: &Path, files: &mut Vec<String>) -> Result<(), RunError> {
    let t1 = &spec.theorem1;
    let cfg = Theorem1Config {
        trials: t1.trials,
        n_min: t1.n_min,
        n_max: t1.n_max,
        beta_min: t1.beta_min,
        beta_max: t1.beta_max,
        seed: sub_seed(spec.seed, DOMAIN_THEOREM1),
    };
    let report = check_theorem1(&cfg)?;
    let failures = report.equality_failures;
    let doc = Theorem1Doc { experiment: spec.experiment, seed: spec.seed, report };
    write_json(dir, "theorem1.json", &doc, files)?;
    if failures > 0 {
        return Err(RunError::Runtime(format!("gradient-ratio identity failed on {failures} components")));
    }
    Ok(())
}

/// `theorem2.json`: census summaries under both entropy readings; the cell
/// CSV uses the Shannon reading.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Theorem2Doc {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub shannon: Theorem2Summary,
    pub paper_literal: Theorem2Summary,
}

fn run_theorem2(spec: &ExperimentSpec, dir: &Path, files: &mut Vec<String>) -> Result<(), RunError> {
    let grid = spec.theorem2;
    let mut csv = String::from("p1,p2,f1,acc1,acc2,lhs,radicand,rhs,holds\n");
    let shannon = theorem2_census(&grid, EntropySign::Shannon, |cell| {
        let rhs = cell.rhs.map(|v| v.to_string()).unwrap_or_default();
        let holds = match cell.holds {
            Some(true) => "true",
            Some(false) => "false",
            None => "vacuous",
        };
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{rhs},{holds}",
            cell.p1, cell.p2, cell.f1, cell.acc1, cell.acc2, cell.lhs, cell.radicand
        )
        .expect("string write");
        Ok(())
    })?;
    let paper_literal = theorem2_census(&grid, EntropySign::PaperLiteral, |_| Ok(()))?;
    write_text(dir, "theorem2_census.csv", &csv, files)?;
    let doc = Theorem2Doc { experiment: spec.experiment, seed: spec.seed, shannon, paper_literal };
    write_json(dir, "theorem2.json", &doc, files)?;
    Ok(())
}

/// `gradcheck.json`: the finite-difference suite report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckDoc {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub report: GradCheckSuiteReport,
}

fn run_gradcheck(spec: &ExperimentSpec, dir: &Path, files: &mut Vec<String>) -> Result<(), RunError> {
    let gc = &spec.gradcheck;
    let cfg = GradCheckSuiteConfig {
        cases: gc.cases,
        step: gc.step,
        tolerance_loss: gc.tolerance_loss,
        tolerance_net: gc.tolerance_net,
        seed: sub_seed(spec.seed, DOMAIN_GRADCHECK),
    };
    let report = run_gradcheck_suite(&cfg)?;
    let passed = report.passed;
    let doc = GradcheckDoc { experiment: spec.experiment, seed: spec.seed, report };
    write_json(dir, "gradcheck.json", &doc, files)?;
    if !passed {
        return Err(RunError::Runtime("finite-difference gradient check failed".to_string()));
    }
    Ok(())
}
