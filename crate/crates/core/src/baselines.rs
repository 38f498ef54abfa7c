//! Feature-free and single-feature benchmark predictors.

use crate::ingest::{Dataset, COVERAGE, RR1};
use crate::scoring::{empirical_cdf, CdfPrediction, N_BINS};
use crate::{Error, Predictor, Result};

/// Coverage floor for the sigmoid estimate: one scan minute.
pub const MIN_COVERAGE: f64 = 1.0 / 60.0;

/// Predicts `P(y <= j) = 1` everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRain;

pub fn no_rain_predict() -> CdfPrediction {
    CdfPrediction::ones()
}

impl Predictor for NoRain {
    fn predict(&self, _features: &[f64]) -> CdfPrediction {
        no_rain_predict()
    }
}

/// Empirical CDF of the training labels, used for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramModel {
    pub cdf: CdfPrediction,
    pub n_train: usize,
}

pub fn train_histogram(labels: &[f64]) -> Result<HistogramModel> {
    let cdf = empirical_cdf(labels.iter().copied())
        .ok_or_else(|| Error::Training("histogram needs at least one label".into()))?;
    Ok(HistogramModel {
        cdf,
        n_train: labels.len(),
    })
}

impl Predictor for HistogramModel {
    fn predict(&self, _features: &[f64]) -> CdfPrediction {
        self.cdf
    }
}

/// Logistic CDF centred on the coverage-normalised RR1 mean, unit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidModel {
    rr1: usize,
    coverage: usize,
    normalize_full_hour: bool,
}

impl SigmoidModel {
    /// Resolves the RR1 and coverage columns of `schema`. With
    /// `normalize_full_hour` the RR1 mean is used as is, i.e. normalised by
    /// the whole hour instead of the covered span.
    pub fn for_schema(schema: &[String], normalize_full_hour: bool) -> Result<Self> {
        let find = |name: &str| {
            schema
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Schema(format!("sigmoid needs feature `{name}`")))
        };
        Ok(SigmoidModel {
            rr1: find(RR1)?,
            coverage: find(COVERAGE)?,
            normalize_full_hour,
        })
    }

    pub fn for_dataset(data: &Dataset, normalize_full_hour: bool) -> Result<Self> {
        Self::for_schema(&data.schema, normalize_full_hour)
    }

    pub fn estimate(&self, features: &[f64]) -> f64 {
        let rr1 = features[self.rr1];
        if self.normalize_full_hour {
            rr1
        } else {
            rr1 / features[self.coverage].max(MIN_COVERAGE)
        }
    }
}

/// `probs[j] = 1 / (1 + exp(-(j - estimate)))`.
pub fn sigmoid_cdf(estimate: f64) -> CdfPrediction {
    let mut probs = [0.0; N_BINS];
    for (j, p) in probs.iter_mut().enumerate() {
        *p = 1.0 / (1.0 + (estimate - j as f64).exp());
    }
    CdfPrediction::new_unchecked(probs)
}

pub fn sigmoid_predict(model: &SigmoidModel, features: &[f64]) -> CdfPrediction {
    sigmoid_cdf(model.estimate(features))
}

impl Predictor for SigmoidModel {
    fn predict(&self, features: &[f64]) -> CdfPrediction {
        sigmoid_predict(self, features)
    }
}
