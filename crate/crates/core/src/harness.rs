//! Experiment orchestration: k and training-size sweeps for the nearest
//! neighbour predictor, the all-predictor benchmark table, and recovery of
//! label-bin proportions from a pair of probe scores.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{train_histogram, NoRain, SigmoidModel};
use crate::ensemble::{fit_voting_weights, SimpleAverage, DEFAULT_OUTLIER_MM};
use crate::ingest::{shuffled_indices, Dataset, MissingDataPolicy, Table};
use crate::knn::{neighbors_cdf, KdTree, KnnPredictor, Metric, Standardizer, DEFAULT_K, DEFAULT_LEAF_CAPACITY, DEFAULT_P};
use crate::logistic::{fit_logistic, TrainConfig};
use crate::scoring::{score_matrix, score_parallel, CdfPrediction, LossAccumulator, N_BINS, SCORE_CHUNK};
use crate::{Error, Predictor, Result};

/// Tolerance on the inferred proportion before it is declared inconsistent.
pub const PROBE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    NoRain,
    Sigmoid,
    Histogram,
    SimpleAvg,
    Voting,
    Logistic,
    Knn,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 7] = [
        PredictorKind::NoRain,
        PredictorKind::Sigmoid,
        PredictorKind::Histogram,
        PredictorKind::SimpleAvg,
        PredictorKind::Voting,
        PredictorKind::Logistic,
        PredictorKind::Knn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::NoRain => "norain",
            PredictorKind::Sigmoid => "sigmoid",
            PredictorKind::Histogram => "histogram",
            PredictorKind::SimpleAvg => "simpleavg",
            PredictorKind::Voting => "voting",
            PredictorKind::Logistic => "logistic",
            PredictorKind::Knn => "knn",
        }
    }

    /// Ensemble predictors consume RR2 and RR3; everything else uses the
    /// default policy that drops them.
    pub fn policy(&self) -> MissingDataPolicy {
        match self {
            PredictorKind::SimpleAvg | PredictorKind::Voting => MissingDataPolicy::keep_all(),
            _ => MissingDataPolicy::default(),
        }
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PredictorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown predictor `{s}`")))
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters shared by the benchmark and the `predict` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub k: usize,
    pub p: f64,
    pub leaf_capacity: usize,
    pub standardize: bool,
    pub outlier_mm: f64,
    pub with_bias: bool,
    pub normalize_full_hour: bool,
    pub logistic: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            k: DEFAULT_K,
            p: DEFAULT_P,
            leaf_capacity: DEFAULT_LEAF_CAPACITY,
            standardize: false,
            outlier_mm: DEFAULT_OUTLIER_MM,
            with_bias: false,
            normalize_full_hour: false,
            logistic: TrainConfig::default(),
        }
    }
}

fn predict_all<P: Predictor>(model: &P, data: &Dataset) -> Vec<CdfPrediction> {
    data.rows.par_iter().map(|r| model.predict(&r.values)).collect()
}

fn check_schema(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.schema != test.schema {
        return Err(Error::Schema(format!(
            "train features {:?} differ from test features {:?}",
            train.schema, test.schema
        )));
    }
    Ok(())
}

/// Trains `kind` on `train` and predicts every row of `test`. Both tables
/// must already be derived under `kind.policy()`.
pub fn train_and_predict(
    kind: PredictorKind,
    train: &Dataset,
    test: &Dataset,
    config: &BenchmarkConfig,
) -> Result<Vec<CdfPrediction>> {
    Ok(match kind {
        PredictorKind::NoRain => predict_all(&NoRain, test),
        PredictorKind::Sigmoid => {
            predict_all(&SigmoidModel::for_dataset(test, config.normalize_full_hour)?, test)
        }
        PredictorKind::Histogram => predict_all(&train_histogram(&train.labels()?)?, test),
        PredictorKind::SimpleAvg => predict_all(&SimpleAverage::for_schema(&test.schema)?, test),
        PredictorKind::Voting => {
            let weights = fit_voting_weights(train, config.outlier_mm, config.with_bias)?;
            predict_all(&weights.bind(&test.schema)?, test)
        }
        PredictorKind::Logistic => {
            check_schema(train, test)?;
            predict_all(&fit_logistic(train, &config.logistic)?, test)
        }
        PredictorKind::Knn => {
            check_schema(train, test)?;
            let (train, test) = if config.standardize {
                let s = Standardizer::fit(train);
                (s.apply(train), s.apply(test))
            } else {
                (train.clone(), test.clone())
            };
            let tree = KdTree::from_dataset(&train, config.leaf_capacity)?;
            KnnPredictor::new(tree, config.k, config.p)?.predict_dataset(&test)?
        }
    })
}

/// Fixed settings recorded alongside every sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub predictor: String,
    pub n_train: usize,
    pub n_val: usize,
    pub p: f64,
    pub leaf_capacity: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Name of the swept parameter: `k` or `train_size`.
    pub parameter: String,
    pub parameter_values: Vec<usize>,
    pub scores: Vec<f64>,
    pub config: SweepConfig,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},score\n", self.parameter);
        for (v, s) in self.parameter_values.iter().zip(&self.scores) {
            writeln!(out, "{v},{s}").expect("write to string");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Index of the lowest score (first on ties).
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if *s < self.scores[best] {
                best = i;
            }
        }
        best
    }
}

fn val_labels(val: &Dataset) -> Result<Vec<f64>> {
    if val.is_empty() {
        return Err(Error::Size("validation set is empty".into()));
    }
    val.labels()
}

/// Scores the k-NN predictor on `val` for every k, using one tree build and
/// one query per validation row at the largest k: the k-NN set for a smaller
/// k is a prefix of the `(distance, index)`-ordered list.
pub fn sweep_k(
    train: &Dataset,
    val: &Dataset,
    k_values: &[usize],
    p: f64,
    leaf_capacity: usize,
) -> Result<SweepResult> {
    if k_values.is_empty() {
        return Err(Error::Config("no k values to sweep".into()));
    }
    if let Some(&k) = k_values.iter().find(|&&k| k == 0 || k > train.len()) {
        return Err(Error::Size(format!(
            "k = {k} must be in 1..={}",
            train.len()
        )));
    }
    check_schema(train, val)?;
    let labels = val_labels(val)?;
    let metric = Metric::new(p)?;
    let tree = KdTree::from_dataset(train, leaf_capacity)?;
    let k_max = *k_values.iter().max().unwrap();
    let queries = val.matrix();
    let d = val.dim();

    let partials: Vec<Vec<LossAccumulator>> = labels
        .par_chunks(SCORE_CHUNK)
        .enumerate()
        .map(|(chunk, ys)| -> Result<Vec<LossAccumulator>> {
            let mut accs = vec![LossAccumulator::default(); k_values.len()];
            for (i, &y) in ys.iter().enumerate() {
                let row = chunk * SCORE_CHUNK + i;
                let nb = tree.query(&queries[row * d..(row + 1) * d], k_max, metric)?;
                for (acc, &k) in accs.iter_mut().zip(k_values) {
                    acc.add(neighbors_cdf(&tree, &nb.indices[..k]).probs(), y);
                }
            }
            Ok(accs)
        })
        .collect::<Result<_>>()?;

    let mut totals = vec![LossAccumulator::default(); k_values.len()];
    for part in &partials {
        for (t, a) in totals.iter_mut().zip(part) {
            t.merge(a);
        }
    }
    Ok(SweepResult {
        parameter: "k".into(),
        parameter_values: k_values.to_vec(),
        scores: totals.iter().map(|t| t.report().score).collect(),
        config: SweepConfig {
            predictor: "knn".into(),
            n_train: train.len(),
            n_val: val.len(),
            p,
            leaf_capacity,
            k: None,
            seed: None,
        },
    })
}

/// Scores the k-NN predictor for growing training sets. Every training set
/// is a prefix of one seeded shuffle of `full_train`, so smaller sets are
/// nested in larger ones.
pub fn sweep_size(
    full_train: &Dataset,
    val: &Dataset,
    sizes: &[usize],
    k: usize,
    p: f64,
    seed: u64,
    leaf_capacity: usize,
) -> Result<SweepResult> {
    if sizes.is_empty() {
        return Err(Error::Config("no training sizes to sweep".into()));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("training sizes must be ascending".into()));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s < k || s > full_train.len()) {
        return Err(Error::Config(format!(
            "training size {s} must be in {k}..={}",
            full_train.len()
        )));
    }
    check_schema(full_train, val)?;
    let labels = val_labels(val)?;
    let order = shuffled_indices(full_train.len(), seed);
    let mut scores = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let train = full_train.subset(&order[..size]);
        let tree = KdTree::from_dataset(&train, leaf_capacity)?;
        let preds = KnnPredictor::new(tree, k, p)?.predict_dataset(val)?;
        scores.push(score_parallel(&preds, &labels)?.score);
    }
    Ok(SweepResult {
        parameter: "train_size".into(),
        parameter_values: sizes.to_vec(),
        scores,
        config: SweepConfig {
            predictor: "knn".into(),
            n_train: full_train.len(),
            n_val: val.len(),
            p,
            leaf_capacity,
            k: Some(k),
            seed: Some(seed),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub predictor: PredictorKind,
    pub score: f64,
    pub rows_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    /// Ascending by score.
    pub rows: Vec<BenchmarkRow>,
    pub config: BenchmarkConfig,
}

impl BenchmarkTable {
    pub fn score_of(&self, kind: PredictorKind) -> Option<f64> {
        self.rows.iter().find(|r| r.predictor == kind).map(|r| r.score)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor,score,rows\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.predictor, r.score, r.rows_evaluated)
                .expect("write to string");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Trains each predictor on `train`, scores it on `test`, and returns the
/// table sorted by score. `on_predictions` sees each predictor's output
/// before scoring, e.g. to write prediction files.
pub fn run_benchmark_with<F>(
    train: &Table,
    test: &Table,
    predictors: &[PredictorKind],
    config: &BenchmarkConfig,
    mut on_predictions: F,
) -> Result<BenchmarkTable>
where
    F: FnMut(PredictorKind, &[CdfPrediction]) -> Result<()>,
{
    if predictors.is_empty() {
        return Err(Error::Config("no predictors requested".into()));
    }
    let mut rows = Vec::with_capacity(predictors.len());
    for &kind in predictors {
        let policy = kind.policy();
        let train_x = train.features(&policy);
        let test_x = test.features(&policy);
        let labels = val_labels(&test_x)?;
        let preds = train_and_predict(kind, &train_x, &test_x, config)?;
        on_predictions(kind, &preds)?;
        let report = score_parallel(&preds, &labels)?;
        rows.push(BenchmarkRow {
            predictor: kind,
            score: report.score,
            rows_evaluated: report.rows,
        });
    }
    rows.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(BenchmarkTable {
        rows,
        config: config.clone(),
    })
}

pub fn run_benchmark(
    train: &Table,
    test: &Table,
    predictors: &[PredictorKind],
    config: &BenchmarkConfig,
) -> Result<BenchmarkTable> {
    run_benchmark_with(train, test, predictors, config, |_, _| Ok(()))
}

/// Fraction of labels at or below bin `j`, recovered from the mean scores of
/// the all-ones submission and the same submission with column `j` zeroed.
///
/// Zeroing column `j` changes each row's bin-`j` term from `[y > j]` to
/// `[y <= j]`, a per-row change of `(2 [y <= j] - 1) / n_bins`.
pub fn infer_bin_proportion(score_all_ones: f64, score_col_zeroed: f64, n_bins: usize) -> Result<f64> {
    let p = (n_bins as f64 * (score_col_zeroed - score_all_ones) + 1.0) / 2.0;
    if !(-PROBE_TOLERANCE..=1.0 + PROBE_TOLERANCE).contains(&p) {
        return Err(Error::Inconsistency(p));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Mean scores of the all-ones submission and of the submission with
/// column `j` zeroed, against `labels`.
pub fn probe_scores(labels: &[f64], j: usize) -> Result<(f64, f64)> {
    if j >= N_BINS {
        return Err(Error::Config(format!("bin {j} outside 0..{N_BINS}")));
    }
    let ones = vec![[1.0; N_BINS]; labels.len()];
    let mut zeroed = ones.clone();
    for row in zeroed.iter_mut() {
        row[j] = 0.0;
    }
    Ok((
        score_matrix(&ones, labels)?.score,
        score_matrix(&zeroed, labels)?.score,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub bin: usize,
    pub score_all_ones: f64,
    pub score_zeroed: f64,
    pub inferred: f64,
}

/// Runs the probe pair for every bin and infers the full label CDF.
pub fn infer_histogram(labels: &[f64]) -> Result<Vec<ProbeRow>> {
    (0..N_BINS)
        .map(|bin| {
            let (ones, zeroed) = probe_scores(labels, bin)?;
            Ok(ProbeRow {
                bin,
                score_all_ones: ones,
                score_zeroed: zeroed,
                inferred: infer_bin_proportion(ones, zeroed, N_BINS)?,
            })
        })
        .collect()
}

pub fn probes_to_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("bin,score_all_ones,score_zeroed,inferred\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.bin, r.score_all_ones, r.score_zeroed, r.inferred
        )
        .expect("write to string");
    }
    out
}
