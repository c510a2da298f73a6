//! Labeled datasets: synthetic Gaussian mixtures, deterministic splits,
//! covariate-shift corruption, and a small CSV interchange format.
//!
//! CSV rows are `feature_1,...,feature_d,label` with no header; files ending
//! in `.gz` are read and written gzip-compressed. All randomness is driven by
//! explicit seeds, so every generator and split is reproducible.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

/// Feature matrix plus integer labels in `0..n_classes`.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<LabeledDataset> {
        if features.nrows() == 0 {
            return Err(Error::config("dataset must contain at least one sample".to_string()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {n_classes}")));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|&(_, &l)| l >= n_classes) {
            return Err(Error::config(format!("label {l} at sample {i} out of range for {n_classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("features must be finite".to_string()));
        }
        Ok(LabeledDataset { features, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the given rows into a new feature matrix / label vector pair.
    pub fn rows(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let mut features = Array2::zeros((indices.len(), self.dim()));
        let mut labels = Vec::with_capacity(indices.len());
        for (out, &i) in indices.iter().enumerate() {
            features.row_mut(out).assign(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        (features, labels)
    }

    fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let (features, labels) = self.rows(indices);
        LabeledDataset { features, labels, n_classes: self.n_classes }
    }
}

/// Fractions of a dataset assigned to the train / calibration / test parts.
/// Must be positive and sum to 1 within 1e-9.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub calib: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("train", self.train), ("calib", self.calib), ("test", self.test)] {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::config(format!("split fraction `{name}` must be positive, got {f}")));
            }
        }
        let sum = self.train + self.calib + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// The three disjoint parts produced by [`split`].
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: LabeledDataset,
    pub calib: LabeledDataset,
    pub test: LabeledDataset,
}

/// Draws `samples_per_class` points per class from isotropic Gaussians whose
/// centers are themselves standard-normal draws. Samples are emitted in class
/// order (all of class 0, then class 1, ...).
pub fn gen_gaussian_mixture(
    n_classes: usize,
    samples_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes < 2 {
        return Err(Error::config(format!("need at least 2 classes, got {n_classes}")));
    }
    if samples_per_class == 0 {
        return Err(Error::config("need at least one sample per class".to_string()));
    }
    if dim == 0 {
        return Err(Error::config("feature dimension must be positive".to_string()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::config(format!("spread must be finite and non-negative, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let centers: Array2<f64> = Array2::from_shape_fn((n_classes, dim), |_| normal.sample(&mut rng));
    let total = n_classes * samples_per_class;
    let mut features = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    for c in 0..n_classes {
        for s in 0..samples_per_class {
            let row = c * samples_per_class + s;
            for d in 0..dim {
                let eps: f64 = normal.sample(&mut rng);
                features[[row, d]] = centers[[c, d]] + spread * eps;
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, n_classes)
}

/// Splits `data` into disjoint train / calibration / test parts.
///
/// Indices are shuffled with a seeded generator, assigned to parts by the
/// rounded fraction sizes, then restored to ascending order inside each part,
/// so samples keep their original relative order.
pub fn split(data: &LabeledDataset, spec: &SplitSpec, seed: u64) -> Result<Splits> {
    spec.validate()?;
    let total = data.len();
    let n_train = (spec.train * total as f64).round() as usize;
    let n_calib = (spec.calib * total as f64).round() as usize;
    if n_train == 0 || n_calib == 0 || n_train + n_calib >= total {
        return Err(Error::config(format!(
            "split of {total} samples leaves an empty part (train {n_train}, calib {n_calib}, test {})",
            total.saturating_sub(n_train + n_calib)
        )));
    }
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let (train_idx, rest) = indices.split_at(n_train);
    let (calib_idx, test_idx) = rest.split_at(n_calib);
    let mut train_idx = train_idx.to_vec();
    let mut calib_idx = calib_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    calib_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Splits {
        train: data.subset(&train_idx),
        calib: data.subset(&calib_idx),
        test: data.subset(&test_idx),
    })
}

/// Default slope of the linear severity grid: σ multiplier `0.1 * severity`.
pub const DEFAULT_SIGMA_PER_SEVERITY: f64 = 0.1;

/// Noise scale multiplier for a severity level on the default linear grid,
/// so severity 5 is exactly five times severity 1.
pub fn severity_sigma_scale(severity: u32) -> f64 {
    DEFAULT_SIGMA_PER_SEVERITY * severity as f64
}

fn check_severity(severity: u32) -> Result<()> {
    if !(1..=5).contains(&severity) {
        return Err(Error::config(format!("corruption severity must lie in 1..=5, got {severity}")));
    }
    Ok(())
}

fn check_sigma_per_severity(sigma_per_severity: f64) -> Result<()> {
    if !(sigma_per_severity.is_finite() && sigma_per_severity >= 0.0) {
        return Err(Error::config(format!(
            "sigma_per_severity must be finite and non-negative, got {sigma_per_severity}"
        )));
    }
    Ok(())
}

/// Adds per-feature Gaussian noise scaled to `severity_sigma_scale(severity)`
/// times each feature's standard deviation over `features`. Constant features
/// are left untouched.
pub fn corrupt_features<R: Rng>(features: &Array2<f64>, severity: u32, rng: &mut R) -> Result<Array2<f64>> {
    corrupt_features_scaled(features, severity, DEFAULT_SIGMA_PER_SEVERITY, rng)
}

/// [`corrupt_features`] on a custom linear grid: the noise σ multiplier is
/// `sigma_per_severity * severity` of each feature's standard deviation.
pub fn corrupt_features_scaled<R: Rng>(
    features: &Array2<f64>,
    severity: u32,
    sigma_per_severity: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    check_severity(severity)?;
    check_sigma_per_severity(sigma_per_severity)?;
    let scale = sigma_per_severity * severity as f64;
    let n = features.nrows() as f64;
    let normal = StandardNormal;
    let mut sigmas = Vec::with_capacity(features.ncols());
    for col in features.axis_iter(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        sigmas.push(scale * var.sqrt());
    }
    let mut out = features.to_owned();
    for mut row in out.rows_mut() {
        for (d, v) in row.iter_mut().enumerate() {
            let eps: f64 = normal.sample(rng);
            *v += sigmas[d] * eps;
        }
    }
    Ok(out)
}

/// Covariate-shifted copy of `data`: features gain seeded Gaussian noise at
/// the given severity, labels and shape are preserved.
pub fn corrupt_gaussian(data: &LabeledDataset, severity: u32, seed: u64) -> Result<LabeledDataset> {
    corrupt_gaussian_scaled(data, severity, DEFAULT_SIGMA_PER_SEVERITY, seed)
}

/// [`corrupt_gaussian`] on a custom linear severity grid.
pub fn corrupt_gaussian_scaled(
    data: &LabeledDataset,
    severity: u32,
    sigma_per_severity: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = corrupt_features_scaled(data.features(), severity, sigma_per_severity, &mut rng)?;
    LabeledDataset::new(features, data.labels().to_vec(), data.n_classes())
}

/// Reads `feature,...,feature,label` rows; `.gz` paths are decompressed.
/// The feature dimension is fixed by the first row.
pub fn load_csv(path: &Path, n_classes: usize) -> Result<LabeledDataset> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if is_gz(path) { Box::new(GzDecoder::new(file)) } else { Box::new(file) };
    let reader = BufReader::new(reader);
    let mut dim = None;
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut row_no = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        row_no += 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::parse(row_no, "expected at least one feature and a label"));
        }
        let d = *dim.get_or_insert(fields.len() - 1);
        if fields.len() - 1 != d {
            return Err(Error::parse(
                row_no,
                format!("expected {d} features per row, got {}", fields.len() - 1),
            ));
        }
        for field in &fields[..d] {
            let value: f64 = field
                .parse()
                .map_err(|_| Error::parse(row_no, format!("`{field}` is not a number")))?;
            if !value.is_finite() {
                return Err(Error::parse(row_no, format!("non-finite feature `{field}`")));
            }
            rows.push(value);
        }
        let label_field = fields[d];
        let label: usize = label_field
            .parse()
            .map_err(|_| Error::parse(row_no, format!("label `{label_field}` is not a non-negative integer")))?;
        if label >= n_classes {
            return Err(Error::parse(row_no, format!("label {label} out of range for {n_classes} classes")));
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::parse(0, "empty dataset"))?;
    let features = Array2::from_shape_vec((labels.len(), dim), rows).expect("row lengths validated");
    LabeledDataset::new(features, labels, n_classes)
}

/// Writes the dataset in the format read by [`load_csv`], atomically.
/// Features use shortest round-trip formatting, so a load restores them
/// bit-for-bit.
pub fn save_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (row, &label) in data.features().rows().into_iter().zip(data.labels()) {
        for v in row.iter() {
            text.push_str(&format!("{v}"));
            text.push(',');
        }
        text.push_str(&format!("{label}\n"));
    }
    atomic_write(path, |out| {
        if is_gz(path) {
            let mut enc = GzEncoder::new(out, flate2::Compression::default());
            enc.write_all(text.as_bytes())?;
            enc.try_finish()?;
            Ok(())
        } else {
            out.write_all(text.as_bytes()).map_err(Into::into)
        }
    })
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}
