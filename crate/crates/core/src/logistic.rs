//! Multinomial logistic regression over the 70 CDF bins.
//!
//! Class 0 is the reference class with implicit zero parameters; every other
//! class `c` has a weight row `theta[c - 1]` over the features followed by a
//! bias weight. Labels map to classes with [`label_bin`]. The model is fitted
//! by maximum likelihood with batch gradient descent and a backtracking line
//! search, starting from all-zero parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::Dataset;
use crate::linalg::Matrix;
use crate::scoring::{label_bin, CdfPrediction, N_BINS};
use crate::{Error, Predictor, Result};

const ROW_CHUNK: usize = 2048;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// `(classes - 1) x (features + 1)`, bias in the last column.
    pub theta: Matrix,
    pub l1_lambda: f64,
    /// Feature names the model was fitted on, if known.
    pub features: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    pub l1_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 300,
            learning_rate: 1.0,
            tolerance: 1e-6,
            l1_lambda: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if !(self.l1_lambda >= 0.0 && self.l1_lambda.is_finite()) {
            return Err(Error::Config("l1_lambda must be finite and >= 0".into()));
        }
        Ok(())
    }
}

impl LogisticModel {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        assert!(n_classes >= 2, "need at least two classes");
        LogisticModel {
            theta: Matrix::zeros(n_classes - 1, n_features + 1),
            l1_lambda: 0.0,
            features: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.theta.rows() + 1
    }

    pub fn n_features(&self) -> usize {
        self.theta.cols() - 1
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Fails unless `schema` matches the fitted feature names.
    pub fn check_schema(&self, schema: &[String]) -> Result<()> {
        if schema.len() != self.n_features()
            || (!self.features.is_empty() && self.features != schema)
        {
            return Err(Error::Schema(format!(
                "model fitted on {:?}, data has {:?}",
                self.features, schema
            )));
        }
        Ok(())
    }

    /// Writes the non-reference logits for `x` into `out[1..]`, with `out[0] = 0`.
    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let d = self.n_features();
        out[0] = 0.0;
        for (c, o) in out[1..].iter_mut().enumerate() {
            let row = self.theta.row(c);
            let mut z = row[d];
            for (w, v) in row[..d].iter().zip(x) {
                z += w * v;
            }
            *o = z;
        }
    }

    fn l1_penalty(&self) -> f64 {
        let d = self.n_features();
        (0..self.theta.rows())
            .map(|c| self.theta.row(c)[..d].iter().map(|w| w.abs()).sum::<f64>())
            .sum()
    }
}

/// Normalises logits in place into probabilities; returns log-sum-exp.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// Class probabilities for one feature vector.
pub fn softmax_prob(model: &LogisticModel, x: &[f64]) -> Result<Vec<f64>> {
    model.check_dim(x)?;
    let mut z = vec![0.0; model.n_classes()];
    model.logits(x, &mut z);
    softmax_in_place(&mut z);
    Ok(z)
}

/// Augmented design matrix and class targets.
struct Design {
    x: Vec<f64>,
    classes: Vec<usize>,
    d: usize,
}

impl Design {
    fn new(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Training("no training rows".into()));
        }
        let labels = data.labels()?;
        Ok(Design {
            x: data.matrix(),
            classes: labels.iter().map(|&y| label_bin(y)).collect(),
            d: data.dim(),
        })
    }

    fn rows(&self) -> usize {
        self.classes.len()
    }
}

fn evaluate(model: &LogisticModel, design: &Design, l1_lambda: f64) -> (f64, Matrix) {
    let k = model.n_classes();
    let d = design.d;
    let cols = d + 1;
    let m = design.rows();

    // Fixed chunks summed in order: deterministic for any thread count.
    let partials: Vec<(f64, Vec<f64>)> = design
        .classes
        .par_chunks(ROW_CHUNK)
        .enumerate()
        .map(|(chunk, classes)| {
            let base = chunk * ROW_CHUNK;
            let mut loss = 0.0;
            let mut grad = vec![0.0; (k - 1) * cols];
            let mut z = vec![0.0; k];
            for (i, &class) in classes.iter().enumerate() {
                let x = &design.x[(base + i) * d..(base + i + 1) * d];
                model.logits(x, &mut z);
                let zc = z[class];
                let lse = softmax_in_place(&mut z);
                loss += lse - zc;
                for c in 1..k {
                    let r = z[c] - if c == class { 1.0 } else { 0.0 };
                    let g = &mut grad[(c - 1) * cols..c * cols];
                    for (gj, xj) in g[..d].iter_mut().zip(x) {
                        *gj += r * xj;
                    }
                    g[d] += r;
                }
            }
            (loss, grad)
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; (k - 1) * cols];
    for (l, g) in &partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv_m = 1.0 / m as f64;
    loss *= inv_m;
    for g in grad.iter_mut() {
        *g *= inv_m;
    }

    if l1_lambda > 0.0 {
        loss += l1_lambda * model.l1_penalty();
        for c in 0..k - 1 {
            let row = model.theta.row(c);
            for j in 0..d {
                let w = row[j];
                if w != 0.0 {
                    grad[c * cols + j] += l1_lambda * w.signum();
                }
            }
        }
    }
    (loss, Matrix::new(k - 1, cols, grad).expect("gradient shape"))
}

/// Mean negative log-likelihood plus the L1 penalty on non-bias weights, and
/// its (sub)gradient.
pub fn nll_and_gradient(
    model: &LogisticModel,
    data: &Dataset,
    l1_lambda: f64,
) -> Result<(f64, Matrix)> {
    let design = Design::new(data)?;
    if design.d != model.n_features() {
        return Err(Error::Shape(format!(
            "model expects {} features, data has {}",
            model.n_features(),
            design.d
        )));
    }
    if let Some(&c) = design.classes.iter().find(|&&c| c >= model.n_classes()) {
        return Err(Error::Shape(format!(
            "label class {c} outside the model's {} classes",
            model.n_classes()
        )));
    }
    Ok(evaluate(model, &design, l1_lambda))
}

/// Fits a 70-class model from zero initialization.
pub fn fit_logistic(data: &Dataset, config: &TrainConfig) -> Result<LogisticModel> {
    config.validate()?;
    let design = Design::new(data)?;
    let mut model = LogisticModel::zeros(N_BINS, design.d);
    model.l1_lambda = config.l1_lambda;
    model.features = data.schema.clone();

    let (mut loss, mut grad) = evaluate(&model, &design, config.l1_lambda);
    if !loss.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut step = config.learning_rate;
    for iteration in 0..config.max_iters {
        let g2: f64 = grad.as_slice().iter().map(|g| g * g).sum();
        if g2.sqrt() < config.tolerance {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let data: Vec<f64> = model
                .theta
                .as_slice()
                .iter()
                .zip(grad.as_slice())
                .map(|(w, g)| w - step * g)
                .collect();
            let candidate = LogisticModel {
                theta: Matrix::new(model.theta.rows(), model.theta.cols(), data)?,
                ..model.clone()
            };
            let (cand_loss, cand_grad) = evaluate(&candidate, &design, config.l1_lambda);
            if !cand_loss.is_finite() {
                return Err(Error::Divergence {
                    iteration: iteration + 1,
                });
            }
            if cand_loss <= loss - ARMIJO * step * g2 {
                accepted = Some((candidate, cand_loss, cand_grad));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, l, g)) => {
                model = candidate;
                loss = l;
                grad = g;
                step = (step * 2.0).min(config.learning_rate);
            }
            // No descent along the (sub)gradient: treat as converged.
            None => break,
        }
    }
    Ok(model)
}

/// Cumulative class probabilities as a CDF over the bins.
pub fn logistic_predict(model: &LogisticModel, x: &[f64]) -> Result<CdfPrediction> {
    if model.n_classes() != N_BINS {
        return Err(Error::Shape(format!(
            "CDF output needs {N_BINS} classes, model has {}",
            model.n_classes()
        )));
    }
    let p = softmax_prob(model, x)?;
    let mut probs = [0.0; N_BINS];
    let mut acc = 0.0;
    for (j, pj) in p.iter().enumerate() {
        acc += pj;
        probs[j] = acc.min(1.0);
    }
    probs[N_BINS - 1] = 1.0;
    Ok(CdfPrediction::new_unchecked(probs))
}

impl Predictor for LogisticModel {
    /// Panics if `features` has the wrong length; check the schema first.
    fn predict(&self, features: &[f64]) -> CdfPrediction {
        logistic_predict(self, features).expect("feature length checked by caller")
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    classes: usize,
    reference_class: usize,
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`; the last column holds the biases.
    theta: Vec<f64>,
    l1_lambda: f64,
    features: Vec<String>,
}

impl LogisticModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            classes: self.n_classes(),
            reference_class: 0,
            rows: self.theta.rows(),
            cols: self.theta.cols(),
            theta: self.theta.as_slice().to_vec(),
            l1_lambda: self.l1_lambda,
            features: self.features.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.reference_class != 0 || file.classes != file.rows + 1 || file.cols == 0 {
            return Err(Error::Data("inconsistent logistic model dimensions".into()));
        }
        if file.theta.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("non-finite logistic parameter".into()));
        }
        Ok(LogisticModel {
            theta: Matrix::new(file.rows, file.cols, file.theta)?,
            l1_lambda: file.l1_lambda,
            features: file.features,
        })
    }
}
