//! Probabilistic prediction of hourly rainfall totals from radar features.
//!
//! Every predictor emits a [`CdfPrediction`]: 70 non-decreasing probabilities
//! `P(y <= j)` for integer thresholds `j = 0..69` millimetres. Predictions are
//! compared with the bin-wise squared loss implemented in [`scoring`].
//!
//! Modules:
//! - [`ingest`]: radar CSV parsing, feature derivation, synthetic data and splits
//! - [`scoring`]: the CDF loss, Heaviside step and step CDFs
//! - [`baselines`]: `No Rain`, `Sigmoid` and `Histogram` predictors
//! - [`ensemble`]: simple-average and least-squares voting over RR1/RR2/RR3
//! - [`logistic`]: multinomial logistic regression over the 70 bins
//! - [`knn`]: k-d tree and empirical-CDF nearest neighbour predictor
//! - [`harness`]: sweeps, benchmark table and histogram inference

pub mod baselines;
pub mod ensemble;
mod error;
pub mod harness;
pub mod ingest;
pub mod knn;
pub mod linalg;
pub mod logistic;
pub mod scoring;

pub use error::{Error, ErrorKind, Result};
pub use scoring::{CdfPrediction, N_BINS};

/// Anything that maps a derived feature vector to a CDF prediction.
pub trait Predictor: Send + Sync {
    fn predict(&self, features: &[f64]) -> CdfPrediction;
}
