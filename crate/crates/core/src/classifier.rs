//! Probabilistic source classifiers `eta_W(x) = (p(U=0|x), p(U=1|x))`.
//!
//! Two implementations are provided: an L2-regularized logistic regression
//! trained by minibatch gradient descent, and a tabulated classifier read
//! off a [`DiscretePopulation`]. Both clip `eta_1` to `[eps, 1 - eps]` so the
//! logarithms taken downstream stay finite.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tilt::{dot, DiscretePopulation, LabeledDataset};

pub const DEFAULT_CLIP_EPSILON: f64 = 1e-6;

/// Anything that yields class probabilities on raw feature vectors.
pub trait ProbabilisticClassifier {
    /// Feature dimension accepted by [`predict_proba`](Self::predict_proba).
    fn dim(&self) -> usize;

    /// `(eta_0, eta_1)`, with `eta_0 + eta_1 == 1` and both in `[eps, 1 - eps]`.
    fn predict_proba(&self, x: &[f64]) -> Result<(f64, f64)>;
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn clipped_pair(eta1: f64, eps: f64) -> (f64, f64) {
    let eta1 = eta1.clamp(eps, 1.0 - eps);
    (1.0 - eta1, eta1)
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::invalid(format!("clip_epsilon {eps} is not in (0, 0.5)")));
    }
    Ok(())
}

/// Per-feature mean and scale used during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    fn fit(data: &LabeledDataset) -> Self {
        let d = data.dim();
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for (x, _) in data.rows() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for (x, _) in data.rows() {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, data: &LabeledDataset) -> Vec<f64> {
        let mut out = Vec::with_capacity(data.features().len());
        for (x, _) in data.rows() {
            for ((v, m), s) in x.iter().zip(&self.mean).zip(&self.scale) {
                out.push((v - m) / s);
            }
        }
        out
    }
}

/// Logistic-regression source classifier on raw features.
///
/// `weights` and `bias` act on unstandardized inputs; the standardization
/// used while training is folded into them and kept only for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub clip_epsilon: f64,
    pub standardization: Option<Standardization>,
}

impl SourceClassifier {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self {
            weights,
            bias,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
            standardization: None,
        }
    }

    pub fn with_clip(mut self, eps: f64) -> Result<Self> {
        check_epsilon(eps)?;
        self.clip_epsilon = eps;
        Ok(self)
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape {
                what: "classifier input",
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }
}

impl ProbabilisticClassifier for SourceClassifier {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok(clipped_pair(sigmoid(self.logit(x)?), self.clip_epsilon))
    }
}

/// Exact `p(U=1 | x)` tabulated on a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedClassifier {
    pub alphabet: Vec<Vec<f64>>,
    pub eta1: Vec<f64>,
    pub clip_epsilon: f64,
}

impl ProbabilisticClassifier for TabulatedClassifier {
    fn dim(&self) -> usize {
        self.alphabet.first().map_or(0, Vec::len)
    }

    fn predict_proba(&self, x: &[f64]) -> Result<(f64, f64)> {
        let i = self
            .alphabet
            .iter()
            .position(|a| a.as_slice() == x)
            .ok_or_else(|| Error::Domain(format!("{x:?} is not in the classifier alphabet")))?;
        Ok(clipped_pair(self.eta1[i], self.clip_epsilon))
    }
}

/// The exact source conditional `p(U=i|x) = p(x, i) / p(x)` of a population,
/// clipped by `clip_epsilon`.
pub fn oracle_classifier(pop: &DiscretePopulation, clip_epsilon: f64) -> Result<TabulatedClassifier> {
    check_epsilon(clip_epsilon)?;
    let eta1 = (0..pop.len())
        .map(|i| {
            let marginal = pop.source_marginal(i);
            if marginal <= 0.0 {
                return Err(Error::Domain(format!(
                    "alphabet point {:?} has zero source mass",
                    pop.alphabet()[i]
                )));
            }
            Ok(pop.source_pmf()[i][1] / marginal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TabulatedClassifier {
        alphabet: pop.alphabet().to_vec(),
        eta1,
        clip_epsilon,
    })
}

/// Serialized form of either classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierModel {
    Logistic(SourceClassifier),
    Tabulated(TabulatedClassifier),
}

impl ProbabilisticClassifier for ClassifierModel {
    fn dim(&self) -> usize {
        match self {
            Self::Logistic(c) => c.dim(),
            Self::Tabulated(c) => c.dim(),
        }
    }

    fn predict_proba(&self, x: &[f64]) -> Result<(f64, f64)> {
        match self {
            Self::Logistic(c) => c.predict_proba(x),
            Self::Tabulated(c) => c.predict_proba(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 256,
            l2_penalty: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train.learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("train.epochs and train.batch_size must be positive"));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::invalid("train.l2_penalty must be nonnegative"));
        }
        Ok(())
    }
}

/// Weighted, L2-regularized mean log loss over standardized rows, with
/// parameters laid out as `[w_0, .., w_{d-1}, b]`.
///
/// `value = (1/n) sum_j r_j * logloss(w . z_j + b, u_j) + (l2 / 2) |w|^2`
/// where `r_j` are the optional row weights (all ones when absent). The
/// bias is not penalized.
pub struct LogisticObjective<'a> {
    pub dim: usize,
    pub features: &'a [f64],
    pub labels: &'a [u8],
    pub row_weights: Option<&'a [f64]>,
    pub l2: f64,
}

impl LogisticObjective<'_> {
    fn row_term(&self, params: &[f64], j: usize, grad: Option<&mut [f64]>) -> f64 {
        let d = self.dim;
        let z = &self.features[j * d..(j + 1) * d];
        let logit = dot(&params[..d], z) + params[d];
        let u = f64::from(self.labels[j]);
        let r = self.row_weights.map_or(1.0, |w| w[j]);
        if let Some(g) = grad {
            let resid = r * (sigmoid(logit) - u);
            for (gk, zk) in g[..d].iter_mut().zip(z) {
                *gk += resid * zk;
            }
            g[d] += resid;
        }
        r * (softplus(logit) - u * logit)
    }

    fn penalty(&self, params: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let w = &params[..self.dim];
        if let Some(g) = grad {
            for (gk, wk) in g.iter_mut().zip(w) {
                *gk += self.l2 * wk;
            }
        }
        0.5 * self.l2 * dot(w, w)
    }

    /// Objective value over all rows.
    pub fn value(&self, params: &[f64]) -> f64 {
        let n = self.labels.len();
        let total: f64 = (0..n).map(|j| self.row_term(params, j, None)).sum();
        total / n as f64 + self.penalty(params, None)
    }

    /// Objective value and gradient over all rows.
    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let all: Vec<usize> = (0..self.labels.len()).collect();
        self.batch_value_and_gradient(params, &all)
    }

    /// Objective value and gradient restricted to the rows in `batch`.
    pub fn batch_value_and_gradient(&self, params: &[f64], batch: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.dim + 1];
        let mut total = 0.0;
        for &j in batch {
            total += self.row_term(params, j, Some(&mut grad));
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        let value = total * scale + self.penalty(params, Some(&mut grad));
        (value, grad)
    }
}

/// Trained classifier plus the full-data objective after every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub classifier: SourceClassifier,
    pub epoch_losses: Vec<f64>,
}

/// Fits the logistic source classifier by minibatch gradient descent.
pub fn train_classifier(data: &LabeledDataset, cfg: &TrainConfig) -> Result<SourceClassifier> {
    Ok(train_weighted(data, None, cfg)?.classifier)
}

/// Minibatch gradient descent on the weighted logistic objective.
///
/// Features are standardized with the training mean and standard deviation;
/// the returned classifier has that transform folded into its parameters.
/// Each epoch visits a seeded permutation of the rows in chunks of
/// `batch_size`. Data with a single class yields the constant classifier
/// that predicts that class with probability `1 - eps`.
pub fn train_weighted(
    data: &LabeledDataset,
    row_weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(w) = row_weights {
        if w.len() != data.len() {
            return Err(Error::Shape {
                what: "row weights",
                expected: data.len(),
                found: w.len(),
            });
        }
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("row weights must be positive and finite"));
        }
    }
    let d = data.dim();
    if let Some(class) = single_class(data.labels()) {
        // The likelihood has no finite maximizer; return the clipped limit.
        let eps = DEFAULT_CLIP_EPSILON;
        let bias = ((1.0 - eps) / eps).ln();
        return Ok(TrainOutcome {
            classifier: SourceClassifier::new(vec![0.0; d], if class == 1 { bias } else { -bias }),
            epoch_losses: Vec::new(),
        });
    }
    let standardization = Standardization::fit(data);
    let z = standardization.apply(data);
    let objective = LogisticObjective {
        dim: d,
        features: &z,
        labels: data.labels(),
        row_weights,
        l2: cfg.l2_penalty,
    };

    let mut params = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grad) = objective.batch_value_and_gradient(&params, batch);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
        let loss = objective.value(&params);
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                message: format!(
                    "logistic loss became non-finite in epoch {epoch}; \
                     try a smaller learning_rate than {}",
                    cfg.learning_rate
                ),
                trace: None,
            });
        }
        epoch_losses.push(loss);
    }

    let weights: Vec<f64> = params[..d]
        .iter()
        .zip(&standardization.scale)
        .map(|(v, s)| v / s)
        .collect();
    let bias = params[d] - dot(&weights, &standardization.mean);
    Ok(TrainOutcome {
        classifier: SourceClassifier {
            weights,
            bias,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
            standardization: Some(standardization),
        },
        epoch_losses,
    })
}

fn single_class(labels: &[u8]) -> Option<u8> {
    let first = *labels.first()?;
    labels.iter().all(|u| *u == first).then_some(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn predict_proba_examples() {
        let c = SourceClassifier::new(vec![0.0, 0.0], 0.0);
        assert_eq!(c.predict_proba(&[3.0, -1.0]).unwrap(), (0.5, 0.5));
        let c = SourceClassifier::new(vec![1.0], 0.0);
        assert_eq!(c.predict_proba(&[0.0]).unwrap(), (0.5, 0.5));
        let (_, eta1) = c.predict_proba(&[3.0f64.ln()]).unwrap();
        assert_relative_eq!(eta1, 0.75, epsilon = 1e-15);
        assert!(matches!(c.predict_proba(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn clipping_bounds_extreme_logits() {
        let c = SourceClassifier::new(vec![1.0], 0.0);
        let (e0, e1) = c.predict_proba(&[1e6]).unwrap();
        assert_eq!(e1, 1.0 - DEFAULT_CLIP_EPSILON);
        assert_eq!(e0 + e1, 1.0);
        let (e0, _) = c.predict_proba(&[-1e6]).unwrap();
        assert_eq!(e0, 1.0 - DEFAULT_CLIP_EPSILON);
        assert!(c.clone().with_clip(0.5).is_err());
        assert!(c.with_clip(0.0).is_err());
    }

    #[test]
    fn oracle_classifier_reads_the_pmf() {
        let pop = DiscretePopulation::scalar(
            &[0.0, 1.0],
            vec![[0.4, 0.1], [0.25, 0.25]],
            vec![[0.2, 0.1], [0.4, 0.3]],
        )
        .unwrap();
        let clf = oracle_classifier(&pop, DEFAULT_CLIP_EPSILON).unwrap();
        assert_relative_eq!(clf.predict_proba(&[0.0]).unwrap().1, 0.2, epsilon = 1e-15);
        assert_eq!(clf.predict_proba(&[1.0]).unwrap(), (0.5, 0.5));
        assert!(matches!(clf.predict_proba(&[2.0]), Err(Error::Domain(_))));

        let anchored = DiscretePopulation::scalar(
            &[0.0, 1.0],
            vec![[0.0, 0.5], [0.5, 0.0]],
            vec![[0.0, 0.5], [0.5, 0.0]],
        )
        .unwrap();
        let clf = oracle_classifier(&anchored, DEFAULT_CLIP_EPSILON).unwrap();
        assert_eq!(clf.predict_proba(&[0.0]).unwrap().1, 1.0 - DEFAULT_CLIP_EPSILON);

        let hole = DiscretePopulation::scalar(
            &[0.0, 1.0],
            vec![[0.0, 0.0], [0.5, 0.5]],
            vec![[0.5, 0.0], [0.5, 0.0]],
        )
        .unwrap();
        assert!(matches!(oracle_classifier(&hole, 1e-6), Err(Error::Domain(_))));
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let data = LabeledDataset::new(1, vec![1.0, -1.0, 2.0], vec![1, 0, 0]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 5,
            batch_size: 1,
            l2_penalty: 1.0,
            seed: 0,
        };
        match train_classifier(&data, &cfg) {
            Err(Error::Divergence { message, .. }) => assert!(message.contains("learning_rate")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one_and_respect_the_clip(
            w in -50.0f64..50.0, b in -50.0f64..50.0, x in -50.0f64..50.0,
        ) {
            let c = SourceClassifier::new(vec![w], b);
            let (e0, e1) = c.predict_proba(&[x]).unwrap();
            prop_assert_eq!(e0 + e1, 1.0);
            prop_assert!(e1 >= c.clip_epsilon && e1 <= 1.0 - c.clip_epsilon);
            prop_assert!(e0 >= c.clip_epsilon && e0 <= 1.0 - c.clip_epsilon);
        }
    }
}
