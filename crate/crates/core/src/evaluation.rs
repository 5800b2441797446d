//! Target-domain evaluation from source data and weights.

use serde::{Deserialize, Serialize};

use crate::classifier::{train_weighted, ProbabilisticClassifier, SourceClassifier, TrainConfig};
use crate::error::{Error, Result};
use crate::tilt::{DiscretePopulation, LabeledDataset, SufficientStatistic, TiltParams};

/// Probability floor used by the log loss.
const LOG_LOSS_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    ZeroOne,
    LogLoss,
}

impl Loss {
    /// Loss of a predicted `P(U = 1)` against label `u`. The zero-one loss
    /// predicts class 1 when the probability is at least one half.
    pub fn eval(self, prob1: f64, u: u8) -> f64 {
        match self {
            Loss::ZeroOne => {
                let predicted = u8::from(prob1 >= 0.5);
                f64::from(predicted != u)
            }
            Loss::LogLoss => {
                let p = prob1.clamp(LOG_LOSS_FLOOR, 1.0 - LOG_LOSS_FLOOR);
                if u == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            }
        }
    }
}

/// `(1/n) sum_j l(f(x_j), u_j) w_j`.
pub fn reweighted_risk(predictions: &[f64], labels: &[u8], weights: &[f64], loss: Loss) -> Result<f64> {
    if predictions.len() != labels.len() || weights.len() != labels.len() {
        return Err(Error::Shape {
            what: "risk inputs",
            expected: labels.len(),
            found: if predictions.len() != labels.len() {
                predictions.len()
            } else {
                weights.len()
            },
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("risk of an empty sample"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("weights must be positive and finite"));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&f, &u), &w)| loss.eval(f, u) * w)
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn empirical_risk(predictions: &[f64], labels: &[u8], loss: Loss) -> Result<f64> {
    reweighted_risk(predictions, labels, &vec![1.0; labels.len()], loss)
}

/// `P(U = 1)` from `clf` on every row.
pub fn predict_all<C>(clf: &C, data: &LabeledDataset) -> Result<Vec<f64>>
where
    C: ProbabilisticClassifier + ?Sized,
{
    data.rows().map(|(x, _)| clf.predict_proba(x).map(|p| p.1)).collect()
}

/// Population form of the reweighted risk: `sum_{x,u} p(x,u) l(f(x),u) w(x,u)`.
///
/// `weights[i][u]` is consulted only where `p(x_i, u) > 0`.
pub fn population_reweighted_risk(
    pop: &DiscretePopulation,
    predict: impl Fn(&[f64]) -> f64,
    weights: &[[Option<f64>; 2]],
    loss: Loss,
) -> Result<f64> {
    if weights.len() != pop.len() {
        return Err(Error::Shape {
            what: "weight table",
            expected: pop.len(),
            found: weights.len(),
        });
    }
    let mut total = 0.0;
    for (i, x) in pop.alphabet().iter().enumerate() {
        let f = predict(x);
        for u in 0..2u8 {
            let p = pop.source_pmf()[i][u as usize];
            if p > 0.0 {
                let w = weights[i][u as usize].ok_or_else(|| {
                    Error::Domain(format!("no weight for cell ({x:?}, {u})"))
                })?;
                total += p * loss.eval(f, u) * w;
            }
        }
    }
    Ok(total)
}

/// True target risk `sum_{x,u} q(x,u) l(f(x),u)`.
pub fn population_target_risk(
    pop: &DiscretePopulation,
    predict: impl Fn(&[f64]) -> f64,
    loss: Loss,
) -> f64 {
    pop.alphabet()
        .iter()
        .zip(pop.target_pmf())
        .map(|(x, q)| {
            let f = predict(x);
            q[0] * loss.eval(f, 0) + q[1] * loss.eval(f, 1)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub loss_name: Loss,
    pub unweighted_source_risk: f64,
    pub reweighted_risk: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub true_target_risk: Option<f64>,
}

/// Source risk with and without weights, plus the true target risk when a
/// labeled target sample is available for held-out checking.
pub fn risk_report<C>(
    clf: &C,
    source: &LabeledDataset,
    weights: &[f64],
    labeled_target: Option<&LabeledDataset>,
    loss: Loss,
) -> Result<RiskReport>
where
    C: ProbabilisticClassifier + ?Sized,
{
    let preds = predict_all(clf, source)?;
    let true_target_risk = labeled_target
        .map(|t| empirical_risk(&predict_all(clf, t)?, t.labels(), loss))
        .transpose()?;
    Ok(RiskReport {
        loss_name: loss,
        unweighted_source_risk: empirical_risk(&preds, source.labels(), loss)?,
        reweighted_risk: reweighted_risk(&preds, source.labels(), weights, loss)?,
        true_target_risk,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    /// `KL(q_X || normalized tilted source marginal)` at the given parameters.
    pub kl_fitted: f64,
    /// The same divergence at zero parameters (untilted source marginal).
    pub kl_unweighted: f64,
}

fn kl_to_tilted(
    pop: &DiscretePopulation,
    params: &TiltParams,
    spec: &SufficientStatistic,
) -> Result<f64> {
    let tilted = (0..pop.len())
        .map(|i| pop.tilted_marginal_at(i, params, spec))
        .collect::<Result<Vec<_>>>()?;
    let z: f64 = tilted.iter().sum();
    let mut kl = 0.0;
    for (i, m) in tilted.iter().enumerate() {
        let q = pop.target_marginal_exact(i);
        if q > 0.0 {
            if *m <= 0.0 {
                return Err(Error::Domain(format!(
                    "tilted source marginal vanishes at {:?} where the target has mass {q}",
                    pop.alphabet()[i]
                )));
            }
            kl += q * (q * z / m).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Exact KL divergence between the target feature marginal and the
/// reweighted source marginal, at `params` and at zero parameters.
pub fn discrete_kl(
    pop: &DiscretePopulation,
    params: &TiltParams,
    spec: &SufficientStatistic,
) -> Result<KlReport> {
    let p = spec.output_dim(pop.dim())?;
    if params.dim() != p {
        return Err(Error::Shape {
            what: "tilt parameters",
            expected: p,
            found: params.dim(),
        });
    }
    Ok(KlReport {
        kl_fitted: kl_to_tilted(pop, params, spec)?,
        kl_unweighted: kl_to_tilted(pop, &TiltParams::zeros(p), spec)?,
    })
}

/// Anchor points per class and whether they pin the tilt parameters down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    /// `anchors[i]` lists alphabet points where only class `i` has source mass.
    pub anchors: [Vec<Vec<f64>>; 2],
    /// Affine rank of `{T(x)}` over each class's anchors.
    pub class_rank: [usize; 2],
    /// Smallest of the two class ranks.
    pub statistic_rank: usize,
    /// Statistic dimension `p`.
    pub statistic_dim: usize,
    pub identifiable: bool,
}

/// Rank of a row-major matrix by Gaussian elimination with partial pivoting.
fn matrix_rank(mut rows: Vec<Vec<f64>>, tol: f64) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(pivot) = (rank..rows.len())
            .max_by(|&a, &b| rows[a][c].abs().total_cmp(&rows[b][c].abs()))
        else {
            break;
        };
        if rows[pivot][c].abs() <= tol {
            continue;
        }
        rows.swap(rank, pivot);
        let (head, tail) = rows.split_at_mut(rank + 1);
        let pivot_row = &head[rank];
        for row in tail {
            let f = row[c] / pivot_row[c];
            for (v, p) in row[c..].iter_mut().zip(&pivot_row[c..]) {
                *v -= f * p;
            }
        }
        rank += 1;
    }
    rank
}

/// Finds anchor sets and checks the rank condition for identifiability.
///
/// A point anchors class `i` when `p(x, i) > 0` and `p(x, j) = 0` for the
/// other class. Each class's anchors must affinely span the statistic space,
/// i.e. `[T(x), 1]` over the anchors has rank `p + 1`, since both `theta_i`
/// and `alpha_i` are unknown.
pub fn anchor_sets(pop: &DiscretePopulation, spec: &SufficientStatistic) -> Result<AnchorReport> {
    let p = spec.output_dim(pop.dim())?;
    let mut anchors: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut class_rank = [0usize; 2];
    for class in 0..2 {
        let other = 1 - class;
        let mut augmented = Vec::new();
        for (x, cell) in pop.alphabet().iter().zip(pop.source_pmf()) {
            if cell[class] > 0.0 && cell[other] == 0.0 {
                anchors[class].push(x.clone());
                let mut row = spec.eval(x)?;
                row.push(1.0);
                augmented.push(row);
            }
        }
        class_rank[class] = matrix_rank(augmented, 1e-10);
    }
    let statistic_rank = class_rank[0].min(class_rank[1]);
    Ok(AnchorReport {
        anchors,
        class_rank,
        statistic_rank,
        statistic_dim: p,
        identifiable: statistic_rank == p + 1,
    })
}

/// `(sum w)^2 / sum w^2`, which is `n` exactly when all weights are equal and
/// strictly less otherwise.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::invalid("effective sample size of no weights"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("weights must be positive and finite"));
    }
    let n = weights.len() as f64;
    if weights.iter().all(|w| *w == weights[0]) {
        return Ok(n);
    }
    // Scale by the largest weight so the squares cannot overflow.
    let max = weights.iter().copied().fold(0.0, f64::max);
    let (s, s2) = weights
        .iter()
        .map(|w| w / max)
        .fold((0.0, 0.0), |(s, s2), w| (s + w, s2 + w * w));
    // Rounding can push nearly uniform weights onto `n`; keep the bound strict.
    Ok((s * s / s2).min(n.next_down()))
}

/// Logistic classifier trained on the weighted log loss
/// `(1/n) sum_j w_j l(f(x_j), u_j)`.
pub fn fine_tune(source: &LabeledDataset, weights: &[f64], cfg: &TrainConfig) -> Result<SourceClassifier> {
    Ok(train_weighted(source, Some(weights), cfg)?.classifier)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]` of the weights. The last bin is
/// closed on the right.
pub fn weight_histogram(weights: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if weights.is_empty() || bins == 0 {
        return Err(Error::invalid("histogram needs weights and at least one bin"));
    }
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("histogram weights must be finite"));
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            bin_left: lo + k as f64 * width,
            bin_right: if k + 1 == bins && hi > lo { hi } else { lo + (k + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for w in weights {
        let k = (((w - lo) / width) as usize).min(bins - 1);
        out[k].count += 1;
    }
    Ok(out)
}
