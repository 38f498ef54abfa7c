//! Ensembles of the three legacy rain-rate estimators (RR1, RR2, RR3).
//!
//! Both predictors turn a point estimate into a step CDF. The simple average
//! weighs the three means equally; the voting predictor uses least-squares
//! weights fitted on the training labels after dropping gauge outliers.

use serde::{Deserialize, Serialize};

use crate::ingest::{Dataset, RR1, RR2, RR3};
use crate::linalg::{norm, solve_least_squares, Matrix};
use crate::scoring::{step_cdf, CdfPrediction};
use crate::{Error, Predictor, Result};

/// Largest plausible hourly rain total in mm; larger labels are treated as gauge errors.
pub const DEFAULT_OUTLIER_MM: f64 = 305.0;

fn rr_columns(schema: &[String]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for (slot, name) in out.iter_mut().zip([RR1, RR2, RR3]) {
        *slot = schema.iter().position(|c| c == name).ok_or_else(|| {
            Error::Schema(format!(
                "ensemble needs feature `{name}`; derive with RR2/RR3 retained"
            ))
        })?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingWeights {
    /// Weights for the RR1, RR2, RR3 means, plus a trailing bias when fitted with one.
    pub w: Vec<f64>,
    pub n_used: usize,
    pub residual_norm: f64,
}

impl VotingWeights {
    pub fn has_bias(&self) -> bool {
        self.w.len() == 4
    }

    pub fn estimate(&self, rr: [f64; 3]) -> f64 {
        let mut e: f64 = rr.iter().zip(&self.w).map(|(x, w)| x * w).sum();
        if self.has_bias() {
            e += self.w[3];
        }
        e.max(0.0)
    }

    /// Binds the weights to the RR columns of a feature schema.
    pub fn bind(&self, schema: &[String]) -> Result<VotingPredictor> {
        if !(self.w.len() == 3 || self.w.len() == 4) || self.w.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data(format!("invalid voting weights {:?}", self.w)));
        }
        Ok(VotingPredictor {
            weights: self.clone(),
            cols: rr_columns(schema)?,
        })
    }
}

/// Least-squares weights on the RR means, ignoring rows whose label exceeds
/// `outlier_threshold`.
pub fn fit_voting_weights(
    data: &Dataset,
    outlier_threshold: f64,
    with_bias: bool,
) -> Result<VotingWeights> {
    let cols = rr_columns(&data.schema)?;
    let labels = data.labels()?;
    let width = if with_bias { 4 } else { 3 };
    let mut design = Vec::new();
    let mut target = Vec::new();
    for (row, &y) in data.rows.iter().zip(&labels) {
        if y > outlier_threshold {
            continue;
        }
        design.extend(cols.iter().map(|&c| row.values[c]));
        if with_bias {
            design.push(1.0);
        }
        target.push(y);
    }
    let n_used = target.len();
    if n_used < width {
        return Err(Error::Data(format!(
            "{n_used} rows left after outlier removal, need at least {width}"
        )));
    }
    let a = Matrix::new(n_used, width, design)?;
    let w = solve_least_squares(&a, &target)?;
    let resid: Vec<f64> = a.mul_vec(&w).iter().zip(&target).map(|(p, y)| p - y).collect();
    Ok(VotingWeights {
        w,
        n_used,
        residual_norm: norm(&resid),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VotingPredictor {
    weights: VotingWeights,
    cols: [usize; 3],
}

pub fn voting_predict(predictor: &VotingPredictor, features: &[f64]) -> CdfPrediction {
    let rr = predictor.cols.map(|c| features[c]);
    step_cdf(predictor.weights.estimate(rr))
}

impl Predictor for VotingPredictor {
    fn predict(&self, features: &[f64]) -> CdfPrediction {
        voting_predict(self, features)
    }
}

/// Equal-weight average of the three RR means, floored at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpleAverage {
    cols: [usize; 3],
}

impl SimpleAverage {
    pub fn for_schema(schema: &[String]) -> Result<Self> {
        Ok(SimpleAverage {
            cols: rr_columns(schema)?,
        })
    }
}

pub fn simple_average_estimate(rr: [f64; 3]) -> f64 {
    ((rr[0] + rr[1] + rr[2]) / 3.0).max(0.0)
}

pub fn simple_average_predict(model: &SimpleAverage, features: &[f64]) -> CdfPrediction {
    step_cdf(simple_average_estimate(model.cols.map(|c| features[c])))
}

impl Predictor for SimpleAverage {
    fn predict(&self, features: &[f64]) -> CdfPrediction {
        simple_average_predict(self, features)
    }
}
