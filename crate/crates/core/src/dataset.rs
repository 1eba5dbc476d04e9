//! Logit/label ingestion, softmax and confidence extraction.
//!
//! Files are headerless CSV: the logits file holds one sample per row with K
//! comma-separated decimals, the labels file one 0-indexed class per row.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};

/// Absolute tolerance on the simplex sum of a [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// An n×K matrix of finite logits paired with n labels in `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDataset {
    logits: Vec<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl LogitDataset {
    /// Builds a dataset from row vectors. Rows must all have the same length.
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(CalibError::Validation {
                    row: i + 1,
                    column: None,
                    message: format!("expected {k} logits, found {}", row.len()),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, labels, k)
    }

    /// Builds a dataset from a row-major buffer of `labels.len() * k` logits.
    pub fn from_flat(logits: Vec<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(CalibError::EmptyInput);
        }
        if k < 2 {
            return Err(CalibError::Validation {
                row: 1,
                column: None,
                message: format!("need at least 2 classes, found {k}"),
            });
        }
        if logits.len() != labels.len() * k {
            return Err(CalibError::LengthMismatch {
                left: logits.len(),
                right: labels.len() * k,
            });
        }
        if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
            return Err(CalibError::Validation {
                row: pos / k + 1,
                column: Some(pos % k + 1),
                message: format!("non-finite logit {}", logits[pos]),
            });
        }
        if let Some(i) = labels.iter().position(|&y| y >= k) {
            return Err(CalibError::Validation {
                row: i + 1,
                column: None,
                message: format!("label {} not below class count {k}", labels[i]),
            });
        }
        Ok(Self { logits, labels, k })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.logits.chunks_exact(self.k)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Concatenates two datasets with the same class count.
    pub fn concat(&self, other: &LogitDataset) -> Result<LogitDataset> {
        if self.k != other.k {
            return Err(CalibError::DimensionMismatch {
                expected: self.k,
                found: other.k,
            });
        }
        let mut logits = self.logits.clone();
        logits.extend_from_slice(&other.logits);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            logits,
            labels,
            k: self.k,
        })
    }

    /// Writes the dataset as a logits CSV and a labels CSV.
    pub fn save(&self, logits_path: &Path, labels_path: &Path) -> Result<()> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CalibError::Io { path, source }
        };
        let mut out = io::BufWriter::new(File::create(logits_path).map_err(io_err(logits_path))?);
        for row in self.rows() {
            let line = row.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
            writeln!(out, "{line}").map_err(io_err(logits_path))?;
        }
        out.flush().map_err(io_err(logits_path))?;

        let mut out = io::BufWriter::new(File::create(labels_path).map_err(io_err(labels_path))?);
        for y in &self.labels {
            writeln!(out, "{y}").map_err(io_err(labels_path))?;
        }
        out.flush().map_err(io_err(labels_path))?;
        Ok(())
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CalibError::EmptyInput);
        }
        if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CalibError::InvalidProbability(p));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(CalibError::InvalidProbability(sum));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry (lowest index on ties) and its value.
    pub fn max(&self) -> (usize, f64) {
        argmax(&self.0)
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// A predicted class with the probability assigned to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub confidence: f64,
}

/// Scores in [0, 1] with binary outcomes, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCalibrationSet {
    scores: Vec<f64>,
    outcomes: Vec<bool>,
}

impl BinaryCalibrationSet {
    pub fn new(scores: Vec<f64>, outcomes: Vec<bool>) -> Result<Self> {
        if scores.len() != outcomes.len() {
            return Err(CalibError::LengthMismatch {
                left: scores.len(),
                right: outcomes.len(),
            });
        }
        if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(CalibError::InvalidProbability(s));
        }
        Ok(Self { scores, outcomes })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.outcomes.iter().filter(|&&o| o).count()
    }
}

/// Lowest-index argmax. `values` must be nonempty.
pub(crate) fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Log-sum-exp with max subtraction.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax of `z` into `out` without input validation.
pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(z: &[f64]) -> Result<ProbVector> {
    if z.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(CalibError::NonFiniteInput);
    }
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    Ok(ProbVector(out))
}

/// Argmax class of `z` and the softmax probability of that class.
pub fn predict(z: &[f64]) -> Result<Prediction> {
    let probs = softmax(z)?;
    let (label, _) = argmax(z);
    Ok(Prediction {
        label,
        confidence: probs[label],
    })
}

/// Binary problem "is the label `k`?" scored by the softmax probability of `k`.
pub fn to_one_vs_all(d: &LogitDataset, k: usize) -> Result<BinaryCalibrationSet> {
    if k >= d.k() {
        return Err(CalibError::IndexOutOfRange {
            index: k,
            bound: d.k(),
        });
    }
    let mut probs = vec![0.0; d.k()];
    let scores = d
        .rows()
        .map(|row| {
            softmax_into(row, &mut probs);
            probs[k]
        })
        .collect();
    let outcomes = d.labels().iter().map(|&y| y == k).collect();
    Ok(BinaryCalibrationSet { scores, outcomes })
}

/// Reads a headerless logits CSV into a row-major buffer and its column count.
/// Values are checked for finiteness; at least two columns are required.
pub fn read_logit_matrix(path: &Path) -> Result<(Vec<f64>, usize)> {
    let rows = read_csv_rows(path)?;
    let mut k = None;
    let mut logits = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let width = *k.get_or_insert(row.len());
        if row.len() != width {
            return Err(format_err(
                path,
                i + 1,
                0,
                format!("ragged row: expected {width} columns, found {}", row.len()),
            ));
        }
        for (j, cell) in row.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                format_err(path, i + 1, j + 1, format!("not a number: {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(CalibError::Validation {
                    row: i + 1,
                    column: Some(j + 1),
                    message: format!("non-finite logit {cell:?}"),
                });
            }
            logits.push(v);
        }
    }
    let k = k.ok_or(CalibError::EmptyInput)?;
    if k < 2 {
        return Err(format_err(path, 1, 0, format!("need at least 2 classes, found {k}")));
    }
    Ok((logits, k))
}

/// Reads a logits CSV and a labels CSV into a validated dataset.
pub fn load_logits(path: &Path, labels_path: &Path) -> Result<LogitDataset> {
    let (logits, k) = read_logit_matrix(path)?;
    let n_rows = logits.len() / k;

    let label_rows = read_csv_rows(labels_path)?;
    let mut labels = Vec::with_capacity(label_rows.len());
    for (i, row) in label_rows.iter().enumerate() {
        if row.len() != 1 {
            return Err(format_err(
                labels_path,
                i + 1,
                0,
                format!("expected one label, found {} columns", row.len()),
            ));
        }
        let y: usize = row[0]
            .trim()
            .parse()
            .map_err(|_| format_err(labels_path, i + 1, 1, format!("not a class index: {:?}", row[0])))?;
        labels.push(y);
    }

    if labels.len() != n_rows {
        return Err(format_err(
            labels_path,
            labels.len().min(n_rows) + 1,
            0,
            format!("{} labels for {} logit rows", labels.len(), n_rows),
        ));
    }
    LogitDataset::from_flat(logits, labels, k)
}

fn format_err(path: &Path, row: usize, column: usize, message: String) -> CalibError {
    CalibError::Format {
        path: path.to_path_buf(),
        row,
        column,
        message,
    }
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|source| CalibError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(io::BufReader::new(file));
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => CalibError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => format_err(path, i + 1, 0, format!("{other:?}")),
        })?;
        rows.push(record.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}
