//! The bin-wise squared CDF loss.
//!
//! For a row with label `y` and prediction `P(y <= j)`, the loss is
//! `sum_j (P(y <= j) - H(j - y))^2` over the 70 bins. Reported scores are the
//! mean over rows and bins, so a single wrong bin on a single row costs `1/70`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of CDF thresholds, `j = 0..=69`.
pub const N_BINS: usize = 70;

/// Rows per independent partial sum when scoring in parallel. Fixed so the
/// reduction order, and therefore the result, does not depend on thread count.
pub const SCORE_CHUNK: usize = 4096;

/// Heaviside step: 1 for `x >= 0`, 0 otherwise.
#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// A predicted CDF over the 70 integer thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfPrediction([f64; N_BINS]);

impl CdfPrediction {
    /// Validates range and monotonicity.
    pub fn new(probs: [f64; N_BINS]) -> std::result::Result<Self, String> {
        validate(&probs)?;
        Ok(CdfPrediction(probs))
    }

    pub fn from_slice(probs: &[f64]) -> std::result::Result<Self, String> {
        let arr: [f64; N_BINS] = probs
            .try_into()
            .map_err(|_| format!("expected {N_BINS} probabilities, got {}", probs.len()))?;
        Self::new(arr)
    }

    /// Skips validation. Callers guarantee the invariants by construction.
    pub(crate) fn new_unchecked(probs: [f64; N_BINS]) -> Self {
        debug_assert!(validate(&probs).is_ok(), "{:?}", validate(&probs));
        CdfPrediction(probs)
    }

    pub fn ones() -> Self {
        CdfPrediction([1.0; N_BINS])
    }

    pub fn probs(&self) -> &[f64; N_BINS] {
        &self.0
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        validate(&self.0)
    }
}

impl std::ops::Index<usize> for CdfPrediction {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

fn validate(probs: &[f64; N_BINS]) -> std::result::Result<(), String> {
    for (j, &p) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("probability {p} at bin {j} outside [0, 1]"));
        }
        if j > 0 && p < probs[j - 1] {
            return Err(format!(
                "decreasing at bin {j}: {} > {p}",
                probs[j - 1]
            ));
        }
    }
    Ok(())
}

/// Degenerate CDF with all mass at `estimate`: 0 below, 1 at and above.
pub fn step_cdf(estimate: f64) -> CdfPrediction {
    let mut probs = [0.0; N_BINS];
    for (j, p) in probs.iter_mut().enumerate() {
        *p = heaviside(j as f64 - estimate);
    }
    CdfPrediction(probs)
}

/// Label to CDF bin: the first threshold `j` with `y <= j`, capped at 69.
///
/// Labels above 69 have no bin where the true CDF reaches 1; they still map
/// to the last class for the classifiers.
pub fn label_bin(label: f64) -> usize {
    let c = label.ceil();
    if c <= 0.0 {
        0
    } else if c >= (N_BINS - 1) as f64 {
        N_BINS - 1
    } else {
        c as usize
    }
}

/// Empirical CDF of `labels` at the 70 thresholds: `#(y <= j) / n`.
///
/// Shared by the global histogram and the nearest neighbour predictor so both
/// produce bitwise identical CDFs for identical label multisets.
pub fn empirical_cdf<I>(labels: I) -> Option<CdfPrediction>
where
    I: IntoIterator<Item = f64>,
{
    let mut counts = [0u64; N_BINS];
    let mut n = 0u64;
    for y in labels {
        n += 1;
        let c = y.ceil();
        if c <= (N_BINS - 1) as f64 {
            counts[if c <= 0.0 { 0 } else { c as usize }] += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let mut probs = [0.0; N_BINS];
    let mut cum = 0u64;
    for j in 0..N_BINS {
        cum += counts[j];
        probs[j] = cum as f64 / n as f64;
    }
    Some(CdfPrediction(probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score: f64,
    pub rows: usize,
    pub per_bin_loss: Vec<f64>,
}

/// Running per-bin squared-loss sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossAccumulator {
    sums: [f64; N_BINS],
    rows: usize,
}

impl Default for LossAccumulator {
    fn default() -> Self {
        LossAccumulator {
            sums: [0.0; N_BINS],
            rows: 0,
        }
    }
}

impl LossAccumulator {
    /// Adds one row. `probs` need not be monotone.
    #[inline]
    pub fn add(&mut self, probs: &[f64; N_BINS], label: f64) {
        for (j, (s, p)) in self.sums.iter_mut().zip(probs).enumerate() {
            let d = p - heaviside(j as f64 - label);
            *s += d * d;
        }
        self.rows += 1;
    }

    pub fn merge(&mut self, other: &LossAccumulator) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.rows += other.rows;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn report(&self) -> ScoreReport {
        let per_bin_loss: Vec<f64> = self.sums.iter().map(|s| s / self.rows as f64).collect();
        let score = per_bin_loss.iter().sum::<f64>() / N_BINS as f64;
        ScoreReport {
            score,
            rows: self.rows,
            per_bin_loss,
        }
    }
}

fn check_labels(labels: &[f64]) -> Result<()> {
    for (row, &y) in labels.iter().enumerate() {
        if !(y >= 0.0 && y.is_finite()) {
            return Err(Error::Validation {
                row,
                message: format!("label {y} is not a finite non-negative value"),
            });
        }
    }
    Ok(())
}

fn check_inputs(predictions: &[CdfPrediction], labels: &[f64]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Shape("nothing to score".into()));
    }
    for (row, pred) in predictions.iter().enumerate() {
        pred.check()
            .map_err(|message| Error::Validation { row, message })?;
    }
    check_labels(labels)
}

/// Mean bin-wise squared loss of `predictions` against `labels`.
pub fn score(predictions: &[CdfPrediction], labels: &[f64]) -> Result<ScoreReport> {
    check_inputs(predictions, labels)?;
    let mut acc = LossAccumulator::default();
    for (pred, &y) in predictions.iter().zip(labels) {
        acc.add(&pred.0, y);
    }
    Ok(acc.report())
}

/// Same as [`score`], evaluated over fixed-size row chunks in parallel.
///
/// Partial sums are combined in chunk order, so the result is reproducible
/// for any thread count; it may differ from [`score`] by rounding only.
pub fn score_parallel(predictions: &[CdfPrediction], labels: &[f64]) -> Result<ScoreReport> {
    score_chunked(predictions, labels, SCORE_CHUNK)
}

pub fn score_chunked(
    predictions: &[CdfPrediction],
    labels: &[f64],
    chunk: usize,
) -> Result<ScoreReport> {
    check_inputs(predictions, labels)?;
    let chunk = chunk.max(1);
    let partials: Vec<LossAccumulator> = predictions
        .par_chunks(chunk)
        .zip(labels.par_chunks(chunk))
        .map(|(preds, ys)| {
            let mut acc = LossAccumulator::default();
            for (pred, &y) in preds.iter().zip(ys) {
                acc.add(&pred.0, y);
            }
            acc
        })
        .collect();
    let mut total = LossAccumulator::default();
    for part in &partials {
        total.merge(part);
    }
    Ok(total.report())
}

/// Scores an arbitrary probability matrix without the monotonicity check,
/// e.g. the probe submissions used for histogram inference. Entries must
/// still lie in `[0, 1]`.
pub fn score_matrix(rows: &[[f64; N_BINS]], labels: &[f64]) -> Result<ScoreReport> {
    if rows.len() != labels.len() || rows.is_empty() {
        return Err(Error::Shape(format!(
            "{} rows for {} labels",
            rows.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    let mut acc = LossAccumulator::default();
    for (row, (probs, &y)) in rows.iter().zip(labels).enumerate() {
        if let Some(j) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation {
                row,
                message: format!("probability {} at bin {j} outside [0, 1]", probs[j]),
            });
        }
        acc.add(probs, y);
    }
    Ok(acc.report())
}

/// Writes predictions as CSV with header `p0,...,p69`.
pub fn write_predictions(path: &Path, predictions: &[CdfPrediction]) -> Result<()> {
    let mut out = String::with_capacity(predictions.len() * N_BINS * 8);
    let header: Vec<String> = (0..N_BINS).map(|j| format!("p{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for pred in predictions {
        for (j, p) in pred.0.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{p}").expect("write to string");
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Reads a prediction file, validating every row.
pub fn read_predictions(path: &Path) -> Result<Vec<CdfPrediction>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    if header.len() != N_BINS {
        return Err(Error::Schema(format!(
            "prediction file has {} columns, expected {N_BINS}",
            header.len()
        )));
    }
    let mut preds = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let mut probs = [0.0; N_BINS];
        for (j, field) in record.iter().enumerate() {
            probs[j] = field.trim().parse().map_err(|_| Error::Parse {
                row,
                column: header[j].to_string(),
                message: format!("invalid float `{field}`"),
            })?;
        }
        let pred =
            CdfPrediction::new(probs).map_err(|message| Error::Validation { row, message })?;
        preds.push(pred);
    }
    Ok(preds)
}
