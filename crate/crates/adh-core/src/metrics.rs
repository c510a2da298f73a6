//! Calibration and discrimination metrics over per-sample prediction records.
//!
//! Confidence binning uses `L` equal-width bins that are closed on the right,
//! with the first bin additionally closed at 0: a confidence `c` lands in bin
//! `ceil(c * L) - 1` (0-based, clamped to the ends). Two bin populations are
//! supported: one entry per record from its top confidence, or one entry per
//! class component. ECE is the count-weighted mean absolute gap between
//! per-bin accuracy and confidence; the L2 variant replaces the absolute gap
//! with its square under an explicit confidence distribution.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::losses::softmax;

/// Slack allowed when checking that confidences form a probability simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Probabilities below this are clamped before taking logs in [`nll`].
pub const NLL_CLAMP: f64 = 1e-300;

/// One classified sample: a confidence vector over classes, the predicted
/// class (always the argmax, lowest index on ties), and the true class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordWire")]
pub struct PredictionRecord {
    confidences: Vec<f64>,
    predicted: usize,
    truth: usize,
}

#[derive(Deserialize)]
struct RecordWire {
    confidences: Vec<f64>,
    predicted: usize,
    truth: usize,
}

impl TryFrom<RecordWire> for PredictionRecord {
    type Error = Error;

    fn try_from(wire: RecordWire) -> Result<PredictionRecord> {
        let record = PredictionRecord::new(wire.confidences, wire.truth)?;
        if record.predicted != wire.predicted {
            return Err(Error::config(format!(
                "predicted class {} does not match the confidence argmax {}",
                wire.predicted, record.predicted
            )));
        }
        Ok(record)
    }
}

impl PredictionRecord {
    /// Validates the simplex and derives the predicted class as the argmax.
    pub fn new(confidences: Vec<f64>, truth: usize) -> Result<PredictionRecord> {
        if confidences.len() < 2 {
            return Err(Error::shape(format!("need at least 2 classes, got {}", confidences.len())));
        }
        if truth >= confidences.len() {
            return Err(Error::config(format!(
                "true class {truth} out of range for {} classes",
                confidences.len()
            )));
        }
        let mut sum = 0.0;
        for &c in &confidences {
            if !c.is_finite() || c < -SIMPLEX_TOLERANCE || c > 1.0 + SIMPLEX_TOLERANCE {
                return Err(Error::config(format!("confidence {c} outside [0, 1]")));
            }
            sum += c;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::config(format!("confidences sum to {sum}, not a probability simplex")));
        }
        let predicted = argmax(&confidences);
        Ok(PredictionRecord { confidences, predicted, truth })
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn predicted(&self) -> usize {
        self.predicted
    }

    pub fn truth(&self) -> usize {
        self.truth
    }

    pub fn n_classes(&self) -> usize {
        self.confidences.len()
    }

    /// Confidence of the predicted class.
    pub fn top_confidence(&self) -> f64 {
        self.confidences[self.predicted]
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.truth
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Builds one record per logit row by applying softmax.
pub fn records_from_logits(logits: &Array2<f64>, labels: &[usize]) -> Result<Vec<PredictionRecord>> {
    if logits.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let mut row_buf = Vec::with_capacity(logits.ncols());
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &truth)| {
            row_buf.clear();
            row_buf.extend(row.iter().copied());
            PredictionRecord::new(softmax(&row_buf), truth)
        })
        .collect()
}

/// Top confidence of every record, in order (the in- vs out-of-distribution
/// score used by [`auroc`]).
pub fn top_confidences(records: &[PredictionRecord]) -> Vec<f64> {
    records.iter().map(PredictionRecord::top_confidence).collect()
}

/// Which entries populate the confidence bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinPopulation {
    /// One entry per record: its top confidence, correct iff the prediction
    /// matches the truth.
    MaxComponent,
    /// One entry per class component: component `j` of a record is correct
    /// iff `j` is the true class.
    AllComponents,
}

/// Per-bin tallies over a record set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedReliability {
    n_bins: usize,
    population: BinPopulation,
    counts: Vec<usize>,
    conf_sums: Vec<f64>,
    correct: Vec<usize>,
    total: usize,
}

/// 0-based index of the bin holding confidence `c`: right-closed bins, first
/// bin closed at 0.
fn bin_index(c: f64, n_bins: usize) -> usize {
    let raw = (c * n_bins as f64).ceil() as isize - 1;
    raw.clamp(0, n_bins as isize - 1) as usize
}

/// Tallies records (or their components) into `n_bins` confidence bins.
pub fn bin_records(records: &[PredictionRecord], n_bins: usize, population: BinPopulation) -> Result<BinnedReliability> {
    if records.is_empty() {
        return Err(Error::config("no records to bin".to_string()));
    }
    if n_bins == 0 {
        return Err(Error::config("need at least one bin".to_string()));
    }
    let n_classes = records[0].n_classes();
    if records.iter().any(|r| r.n_classes() != n_classes) {
        return Err(Error::config("records disagree on the number of classes".to_string()));
    }
    let mut binned = BinnedReliability {
        n_bins,
        population,
        counts: vec![0; n_bins],
        conf_sums: vec![0.0; n_bins],
        correct: vec![0; n_bins],
        total: 0,
    };
    let mut add = |confidence: f64, is_correct: bool| {
        let b = bin_index(confidence, n_bins);
        binned.counts[b] += 1;
        binned.conf_sums[b] += confidence;
        binned.correct[b] += usize::from(is_correct);
        binned.total += 1;
    };
    for record in records {
        match population {
            BinPopulation::MaxComponent => add(record.top_confidence(), record.is_correct()),
            BinPopulation::AllComponents => {
                for (j, &c) in record.confidences().iter().enumerate() {
                    add(c, j == record.truth());
                }
            }
        }
    }
    Ok(binned)
}

impl BinnedReliability {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn population(&self) -> BinPopulation {
        self.population
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn count(&self, bin: usize) -> usize {
        self.counts[bin]
    }

    /// Mean confidence in a bin; NaN for an empty bin.
    pub fn mean_confidence(&self, bin: usize) -> f64 {
        self.conf_sums[bin] / self.counts[bin] as f64
    }

    /// Fraction correct in a bin; NaN for an empty bin.
    pub fn accuracy(&self, bin: usize) -> f64 {
        self.correct[bin] as f64 / self.counts[bin] as f64
    }

    /// `(low, high]` edges of a bin (the first bin includes 0).
    pub fn edges(&self, bin: usize) -> (f64, f64) {
        (bin as f64 / self.n_bins as f64, (bin + 1) as f64 / self.n_bins as f64)
    }
}

/// Expected calibration error: the count-weighted mean absolute gap between
/// accuracy and mean confidence over non-empty bins.
pub fn ece(binned: &BinnedReliability) -> f64 {
    let total = binned.total as f64;
    (0..binned.n_bins)
        .filter(|&b| binned.counts[b] > 0)
        .map(|b| binned.counts[b] as f64 / total * (binned.accuracy(b) - binned.mean_confidence(b)).abs())
        .sum()
}

/// Finite-sample estimate of the L2 calibration error from binned tallies:
/// each non-empty bin contributes its count share times the squared gap.
pub fn ece2_binned(binned: &BinnedReliability) -> f64 {
    let total = binned.total as f64;
    (0..binned.n_bins)
        .filter(|&b| binned.counts[b] > 0)
        .map(|b| {
            let gap = binned.accuracy(b) - binned.mean_confidence(b);
            binned.counts[b] as f64 / total * gap * gap
        })
        .sum::<f64>()
        .sqrt()
}

/// A discrete confidence distribution: strictly positive masses on a finite
/// support, summing to 1 within 1e-12.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidencePmf {
    support: Vec<f64>,
    mass: Vec<f64>,
}

impl ConfidencePmf {
    pub fn new(support: Vec<f64>, mass: Vec<f64>) -> Result<ConfidencePmf> {
        if support.is_empty() || support.len() != mass.len() {
            return Err(Error::shape(format!(
                "support has {} points, mass has {}",
                support.len(),
                mass.len()
            )));
        }
        for &p in &support {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("support point {p} outside [0, 1]")));
            }
        }
        for &f in &mass {
            if !f.is_finite() || f <= 0.0 {
                return Err(Error::config(format!("mass {f} must be strictly positive")));
            }
        }
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("masses sum to {sum}, expected 1")));
        }
        Ok(ConfidencePmf { support, mass })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Exact L2 calibration error of a discrete confidence distribution with
/// known conditional accuracies: `sqrt(sum_i f_i (acc_i - p_i)^2)`.
pub fn ece2(pmf: &ConfidencePmf, cond_acc: &[f64]) -> Result<f64> {
    if cond_acc.len() != pmf.len() {
        return Err(Error::shape(format!(
            "{} conditional accuracies for {} support points",
            cond_acc.len(),
            pmf.len()
        )));
    }
    for &a in cond_acc {
        if !a.is_finite() || !(0.0..=1.0).contains(&a) {
            return Err(Error::config(format!("conditional accuracy {a} outside [0, 1]")));
        }
    }
    let sum: f64 = pmf
        .support
        .iter()
        .zip(&pmf.mass)
        .zip(cond_acc)
        .map(|((&p, &f), &a)| f * (a - p) * (a - p))
        .sum();
    Ok(sum.sqrt())
}

/// Mean Shannon entropy (nats) of the records' confidence vectors.
/// Zero components contribute zero.
pub fn confidence_entropy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::config("no records".to_string()));
    }
    let total: f64 = records
        .iter()
        .map(|r| {
            r.confidences()
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum::<f64>()
        })
        .sum();
    Ok(total / records.len() as f64)
}

/// Mean negative log-likelihood plus how many true-class probabilities had to
/// be clamped up to [`NLL_CLAMP`] before the log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllSummary {
    pub mean: f64,
    pub clamped: usize,
}

pub fn nll(records: &[PredictionRecord]) -> Result<NllSummary> {
    if records.is_empty() {
        return Err(Error::config("no records".to_string()));
    }
    let mut clamped = 0usize;
    let mut total = 0.0;
    for r in records {
        let p = r.confidences()[r.truth()];
        let p = if p < NLL_CLAMP {
            clamped += 1;
            NLL_CLAMP
        } else {
            p
        };
        total -= p.ln();
    }
    Ok(NllSummary { mean: total / records.len() as f64, clamped })
}

/// Fraction of records whose prediction matches the truth.
pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::config("no records".to_string()));
    }
    Ok(records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64)
}

/// Area under the ROC curve for separating in-distribution scores (positive
/// class, expected higher) from shifted scores, via the rank-sum statistic
/// with midranks on ties. Equals the probability that a random in-dist score
/// outranks a random shifted score, ties counting half.
pub fn auroc(in_dist: &[f64], shifted: &[f64]) -> Result<f64> {
    if in_dist.is_empty() || shifted.is_empty() {
        return Err(Error::config("both score sets must be non-empty".to_string()));
    }
    if in_dist.iter().chain(shifted).any(|v| !v.is_finite()) {
        return Err(Error::config("scores must be finite".to_string()));
    }
    let n1 = in_dist.len();
    let n2 = shifted.len();
    let mut combined: Vec<(f64, bool)> = in_dist
        .iter()
        .map(|&v| (v, true))
        .chain(shifted.iter().map(|&v| (v, false)))
        .collect();
    combined.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < combined.len() {
        let mut j = i;
        while j < combined.len() && combined[j].0 == combined[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for entry in &combined[i..j] {
            if entry.1 {
                rank_sum += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n1 as f64 * n2 as f64))
}

/// One row of a reliability table; empty bins carry NaN statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
    /// Signed overconfidence: mean confidence minus accuracy.
    pub gap: f64,
}

/// One row per bin, including empty bins.
pub fn reliability_rows(binned: &BinnedReliability) -> Vec<ReliabilityRow> {
    (0..binned.n_bins)
        .map(|b| {
            let (bin_low, bin_high) = binned.edges(b);
            let count = binned.counts[b];
            let (mean_confidence, accuracy) = if count > 0 {
                (binned.mean_confidence(b), binned.accuracy(b))
            } else {
                (f64::NAN, f64::NAN)
            };
            ReliabilityRow { bin_low, bin_high, count, mean_confidence, accuracy, gap: mean_confidence - accuracy }
        })
        .collect()
}

const RELIABILITY_HEADER: &str = "bin_low,bin_high,count,mean_confidence,accuracy,gap";

/// Writes the full reliability table (all bins) as CSV, atomically.
pub fn write_reliability_csv(path: &Path, binned: &BinnedReliability) -> Result<()> {
    let rows = reliability_rows(binned);
    atomic_write(path, |out| {
        writeln!(out, "{RELIABILITY_HEADER}")?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.bin_low, r.bin_high, r.count, r.mean_confidence, r.accuracy, r.gap
            )?;
        }
        Ok(())
    })
}

/// Reads a table written by [`write_reliability_csv`].
pub fn read_reliability_csv(path: &Path) -> Result<Vec<ReliabilityRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != RELIABILITY_HEADER {
                return Err(Error::parse(1, format!("unexpected header `{line}`")));
            }
            continue;
        }
        let row_no = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::parse(row_no, format!("expected 6 fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::parse(row_no, format!("`{s}` is not a number")))
        };
        rows.push(ReliabilityRow {
            bin_low: num(fields[0])?,
            bin_high: num(fields[1])?,
            count: fields[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(row_no, format!("`{}` is not a count", fields[2])))?,
            mean_confidence: num(fields[3])?,
            accuracy: num(fields[4])?,
            gap: num(fields[5])?,
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(0, "no reliability rows"));
    }
    Ok(rows)
}

const HISTOGRAM_HEADER: &str = "bin_low,bin_high,count,fraction";

/// Writes the per-bin entry counts (a confidence histogram) as CSV.
pub fn write_confidence_histogram_csv(path: &Path, binned: &BinnedReliability) -> Result<()> {
    let total = binned.total as f64;
    atomic_write(path, |out| {
        writeln!(out, "{HISTOGRAM_HEADER}")?;
        for b in 0..binned.n_bins {
            let (low, high) = binned.edges(b);
            writeln!(out, "{},{},{},{}", low, high, binned.counts[b], binned.counts[b] as f64 / total)?;
        }
        Ok(())
    })
}

/// Writes one record per line as JSON.
pub fn write_records_jsonl(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    atomic_write(path, |out| {
        for r in records {
            serde_json::to_writer(&mut *out, r)?;
            writeln!(out)?;
        }
        Ok(())
    })
}

/// Reads records written by [`write_records_jsonl`], re-validating each.
pub fn read_records_jsonl(path: &Path) -> Result<Vec<PredictionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}
