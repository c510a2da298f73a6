//! Loaders for every artifact the runner writes.
//!
//! Each output file has a typed reader here, so a run directory is fully
//! machine-readable by the toolkit itself (and the round trip is tested).

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;

use adh_core::oracles::Theorem2Cell;
use adh_core::trainer::EpochLog;
use adh_core::{Error, Result};

use crate::config::ExperimentSpec;
use crate::runner::{
    AurocRow, BetaSweepMetricsDoc, BetaSweepRow, GradcheckDoc, KSweepMetricsDoc, KSweepRow, ShiftAurocMetricsDoc,
    Theorem1Doc, Theorem2Doc, TrainMetricsDoc,
};

fn load_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a normalized config echo.
pub fn load_config_json(path: &Path) -> Result<ExperimentSpec> {
    load_json_file(path)
}

/// Reads `metrics.json` of a `train` run.
pub fn load_train_metrics(path: &Path) -> Result<TrainMetricsDoc> {
    load_json_file(path)
}

/// Reads `metrics.json` of a `beta_sweep` run.
pub fn load_beta_sweep_metrics(path: &Path) -> Result<BetaSweepMetricsDoc> {
    load_json_file(path)
}

/// Reads `metrics.json` of a `k_sweep` run.
pub fn load_k_sweep_metrics(path: &Path) -> Result<KSweepMetricsDoc> {
    load_json_file(path)
}

/// Reads `metrics.json` of a `shift_auroc` run.
pub fn load_shift_auroc_metrics(path: &Path) -> Result<ShiftAurocMetricsDoc> {
    load_json_file(path)
}

/// Reads `theorem1.json`.
pub fn load_theorem1_doc(path: &Path) -> Result<Theorem1Doc> {
    load_json_file(path)
}

/// Reads `theorem2.json`.
pub fn load_theorem2_doc(path: &Path) -> Result<Theorem2Doc> {
    load_json_file(path)
}

/// Reads `gradcheck.json`.
pub fn load_gradcheck_doc(path: &Path) -> Result<GradcheckDoc> {
    load_json_file(path)
}

/// Reads the per-epoch training log.
pub fn load_epochs_jsonl(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path)?;
    let mut logs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        logs.push(
            serde_json::from_str(line).map_err(|e| Error::parse(i + 1, format!("epoch log: {e}")))?,
        );
    }
    Ok(logs)
}

fn split_row<'a>(line: &'a str, row: usize, expected: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(Error::parse(row, format!("expected {expected} fields, got {}", fields.len())));
    }
    Ok(fields)
}

fn parse_field<T: FromStr>(field: &str, row: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.parse().map_err(|e| Error::parse(row, format!("{name}: {e}")))
}

fn csv_rows(path: &Path, header: &str) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        Some((_, first)) => {
            return Err(Error::parse(0, format!("unexpected header {first:?}")));
        }
        None => return Err(Error::parse(0, "empty file".to_string())),
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

/// Reads `beta_sweep.csv`.
pub fn load_beta_sweep_csv(path: &Path) -> Result<Vec<BetaSweepRow>> {
    let header =
        "beta0,accuracy_main,accuracy_calib,ece_max_main,ece_max_calib,entropy_main,entropy_calib,nll_main,nll_calib";
    csv_rows(path, header)?
        .into_iter()
        .map(|(row, line)| {
            let f = split_row(&line, row, 9)?;
            Ok(BetaSweepRow {
                beta0: parse_field(f[0], row, "beta0")?,
                accuracy_main: parse_field(f[1], row, "accuracy_main")?,
                accuracy_calib: parse_field(f[2], row, "accuracy_calib")?,
                ece_max_main: parse_field(f[3], row, "ece_max_main")?,
                ece_max_calib: parse_field(f[4], row, "ece_max_calib")?,
                entropy_main: parse_field(f[5], row, "entropy_main")?,
                entropy_calib: parse_field(f[6], row, "entropy_calib")?,
                nll_main: parse_field(f[7], row, "nll_main")?,
                nll_calib: parse_field(f[8], row, "nll_calib")?,
            })
        })
        .collect()
}

/// Reads `k_sweep.csv`.
pub fn load_k_sweep_csv(path: &Path) -> Result<Vec<KSweepRow>> {
    let header = "k,overhead,accuracy_main,accuracy_calib,ece_max_main,ece_max_calib,entropy_calib";
    csv_rows(path, header)?
        .into_iter()
        .map(|(row, line)| {
            let f = split_row(&line, row, 7)?;
            Ok(KSweepRow {
                k: parse_field(f[0], row, "k")?,
                overhead: parse_field(f[1], row, "overhead")?,
                accuracy_main: parse_field(f[2], row, "accuracy_main")?,
                accuracy_calib: parse_field(f[3], row, "accuracy_calib")?,
                ece_max_main: parse_field(f[4], row, "ece_max_main")?,
                ece_max_calib: parse_field(f[5], row, "ece_max_calib")?,
                entropy_calib: parse_field(f[6], row, "entropy_calib")?,
            })
        })
        .collect()
}

/// Reads `auroc.csv`.
pub fn load_auroc_csv(path: &Path) -> Result<Vec<AurocRow>> {
    csv_rows(path, "source,head,scoring,auroc")?
        .into_iter()
        .map(|(row, line)| {
            let f = split_row(&line, row, 4)?;
            Ok(AurocRow {
                source: f[0].to_string(),
                head: f[1].to_string(),
                scoring: f[2].to_string(),
                auroc: parse_field(f[3], row, "auroc")?,
            })
        })
        .collect()
}

/// Reads `theorem2_census.csv`.
pub fn load_theorem2_census_csv(path: &Path) -> Result<Vec<Theorem2Cell>> {
    csv_rows(path, "p1,p2,f1,acc1,acc2,lhs,radicand,rhs,holds")?
        .into_iter()
        .map(|(row, line)| {
            let f = split_row(&line, row, 9)?;
            let rhs = if f[7].is_empty() { None } else { Some(parse_field(f[7], row, "rhs")?) };
            let holds = match f[8] {
                "true" => Some(true),
                "false" => Some(false),
                "vacuous" => None,
                other => return Err(Error::parse(row, format!("holds: unexpected value {other:?}"))),
            };
            Ok(Theorem2Cell {
                p1: parse_field(f[0], row, "p1")?,
                p2: parse_field(f[1], row, "p2")?,
                f1: parse_field(f[2], row, "f1")?,
                acc1: parse_field(f[3], row, "acc1")?,
                acc2: parse_field(f[4], row, "acc2")?,
                lhs: parse_field(f[5], row, "lhs")?,
                radicand: parse_field(f[6], row, "radicand")?,
                rhs,
                holds,
            })
        })
        .collect()
}
