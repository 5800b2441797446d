//! Exponential Tilt Reweighting Alignment (ExTRA).
//!
//! Parameters `(theta_i, beta_i)` are fitted by minibatch gradient descent on
//!
//! ```text
//! O = -L + log N + lambda * N + lambda / N
//! L = mean_target log( sum_i eta_i(x) exp(theta_i . T(x) + beta_i) )
//! N = mean_source exp(theta_u . T(x) + beta_u)
//! ```
//!
//! and the intercepts are finalized as `alpha_i = beta_i - log N`, with `N`
//! evaluated on the whole source set, so the returned weights average to one
//! over the source sample.
//!
//! Batches are stored as prepared rows (`T(x)`, classifier output and label)
//! with a probability mass per row. Empirical batches are uniform (sums are
//! divided by `n` once, so zero parameters give exactly `N = 1`); population
//! batches put the exact pmf mass on each alphabet cell, so
//! the same code evaluates both the sample objective and its population
//! limit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ProbabilisticClassifier;
use crate::error::{Error, Result};
use crate::tilt::{
    checked_exp, dot, DiscretePopulation, LabeledDataset, SufficientStatistic, TiltParams,
    UnlabeledDataset,
};

/// Steps between full-data objective evaluations.
pub const CHECK_EVERY: usize = 100;
const EMA_DECAY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtraConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub max_steps: usize,
    pub tol: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ExtraConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 256,
            lambda: 1.0,
            max_steps: 20_000,
            tol: 1e-6,
            patience: 20,
            seed: 0,
        }
    }
}

impl ExtraConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) {
            return Err(Error::invalid("extra.learning_rate must be positive"));
        }
        if !positive(self.lambda) {
            return Err(Error::invalid("extra.lambda must be positive"));
        }
        if !positive(self.tol) {
            return Err(Error::invalid("extra.tol must be positive"));
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.patience == 0 {
            return Err(Error::invalid(
                "extra.batch_size, extra.max_steps and extra.patience must be positive",
            ));
        }
        Ok(())
    }
}

/// Target rows prepared for the loss term: `T(x)` and `(eta_0, eta_1)`.
#[derive(Debug, Clone)]
pub struct TargetBatch {
    dim: usize,
    stats: Vec<f64>,
    eta: Vec<[f64; 2]>,
    mass: Mass,
}

impl TargetBatch {
    /// Builds a batch directly from statistics, probabilities and masses.
    pub fn from_parts(dim: usize, stats: Vec<f64>, eta: Vec<[f64; 2]>, mass: Vec<f64>) -> Result<Self> {
        check_parts(dim, stats.len(), eta.len(), &mass)?;
        Ok(Self {
            dim,
            stats,
            eta,
            mass: Mass::Weighted(mass),
        })
    }

    /// Every row of `data` with mass `1/n`.
    pub fn from_dataset<C>(
        data: &UnlabeledDataset,
        clf: &C,
        spec: &SufficientStatistic,
    ) -> Result<Self>
    where
        C: ProbabilisticClassifier + ?Sized,
    {
        check_classifier(clf, data.dim())?;
        let (dim, stats) = spec.eval_rows(data.rows(), data.dim())?;
        let eta = data
            .rows()
            .map(|x| clf.predict_proba(x).map(|(a, b)| [a, b]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            stats,
            eta,
            mass: Mass::Uniform,
        })
    }

    /// Alphabet points with positive target marginal, weighted by `q_X(x)`.
    pub fn from_population<C>(
        pop: &DiscretePopulation,
        clf: &C,
        spec: &SufficientStatistic,
    ) -> Result<Self>
    where
        C: ProbabilisticClassifier + ?Sized,
    {
        check_classifier(clf, pop.dim())?;
        let dim = spec.output_dim(pop.dim())?;
        let mut stats = Vec::new();
        let mut eta = Vec::new();
        let mut mass = Vec::new();
        for (i, x) in pop.alphabet().iter().enumerate() {
            let q = pop.target_marginal_exact(i);
            if q > 0.0 {
                stats.extend(spec.eval(x)?);
                let (e0, e1) = clf.predict_proba(x)?;
                eta.push([e0, e1]);
                mass.push(q);
            }
        }
        Ok(Self {
            dim,
            stats,
            eta,
            mass: Mass::Weighted(mass),
        })
    }

    pub fn len(&self) -> usize {
        self.stats.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn stat_dim(&self) -> usize {
        self.dim
    }

    fn stat(&self, j: usize) -> &[f64] {
        &self.stats[j * self.dim..(j + 1) * self.dim]
    }

    /// Rows at `indices` (repeats allowed), each with mass `1/len`.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut stats = Vec::with_capacity(indices.len() * self.dim);
        let mut eta = Vec::with_capacity(indices.len());
        for &j in indices {
            stats.extend_from_slice(self.stat(j));
            eta.push(self.eta[j]);
        }
        Self {
            dim: self.dim,
            stats,
            eta,
            mass: Mass::Uniform,
        }
    }
}

/// Labeled source rows prepared for the normalizer term.
#[derive(Debug, Clone)]
pub struct SourceBatch {
    dim: usize,
    stats: Vec<f64>,
    labels: Vec<u8>,
    mass: Mass,
}

impl SourceBatch {
    pub fn from_parts(dim: usize, stats: Vec<f64>, labels: Vec<u8>, mass: Vec<f64>) -> Result<Self> {
        check_parts(dim, stats.len(), labels.len(), &mass)?;
        if labels.iter().any(|&u| u > 1) {
            return Err(Error::invalid("source labels must be 0 or 1"));
        }
        Ok(Self {
            dim,
            stats,
            labels,
            mass: Mass::Weighted(mass),
        })
    }

    pub fn from_dataset(data: &LabeledDataset, spec: &SufficientStatistic) -> Result<Self> {
        let (dim, stats) = spec.eval_rows(data.rows().map(|(x, _)| x), data.dim())?;
        Ok(Self {
            dim,
            stats,
            labels: data.labels().to_vec(),
            mass: Mass::Uniform,
        })
    }

    /// One row per cell with positive source mass, weighted by `p(x, u)`.
    pub fn from_population(pop: &DiscretePopulation, spec: &SufficientStatistic) -> Result<Self> {
        let dim = spec.output_dim(pop.dim())?;
        let mut stats = Vec::new();
        let mut labels = Vec::new();
        let mut mass = Vec::new();
        for (x, cell) in pop.alphabet().iter().zip(pop.source_pmf()) {
            for u in 0..2u8 {
                if cell[u as usize] > 0.0 {
                    stats.extend(spec.eval(x)?);
                    labels.push(u);
                    mass.push(cell[u as usize]);
                }
            }
        }
        Ok(Self {
            dim,
            stats,
            labels,
            mass: Mass::Weighted(mass),
        })
    }

    pub fn len(&self) -> usize {
        self.stats.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn stat_dim(&self) -> usize {
        self.dim
    }

    fn stat(&self, j: usize) -> &[f64] {
        &self.stats[j * self.dim..(j + 1) * self.dim]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut stats = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &j in indices {
            stats.extend_from_slice(self.stat(j));
            labels.push(self.labels[j]);
        }
        Self {
            dim: self.dim,
            stats,
            labels,
            mass: Mass::Uniform,
        }
    }
}

/// Row masses of a batch.
#[derive(Debug, Clone)]
enum Mass {
    /// Mass `1/n` on every row, applied once after summing.
    Uniform,
    Weighted(Vec<f64>),
}

impl Mass {
    /// Factor applied to row `j` inside a sum.
    fn row(&self, j: usize) -> f64 {
        match self {
            Mass::Uniform => 1.0,
            Mass::Weighted(m) => m[j],
        }
    }

    /// Factor applied to a finished sum over `n` rows.
    fn scale(&self, n: usize) -> f64 {
        match self {
            Mass::Uniform => 1.0 / n as f64,
            Mass::Weighted(_) => 1.0,
        }
    }
}

fn check_parts(dim: usize, stats_len: usize, rows: usize, mass: &[f64]) -> Result<()> {
    if rows == 0 {
        return Err(Error::invalid("batch must be nonempty"));
    }
    if stats_len != rows * dim {
        return Err(Error::Shape {
            what: "batch statistics",
            expected: rows * dim,
            found: stats_len,
        });
    }
    if mass.len() != rows {
        return Err(Error::Shape {
            what: "batch masses",
            expected: rows,
            found: mass.len(),
        });
    }
    if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::invalid("batch masses must be nonnegative"));
    }
    Ok(())
}

fn check_classifier<C: ProbabilisticClassifier + ?Sized>(clf: &C, d: usize) -> Result<()> {
    if clf.dim() != d {
        return Err(Error::Shape {
            what: "classifier dimension",
            expected: d,
            found: clf.dim(),
        });
    }
    Ok(())
}

fn check_dim(params: &TiltParams, batch_dim: usize) -> Result<()> {
    if params.dim() != batch_dim {
        return Err(Error::Shape {
            what: "tilt parameters",
            expected: batch_dim,
            found: params.dim(),
        });
    }
    Ok(())
}

/// Per-row pieces of the loss: `l_j = log sum_i eta_i exp(s_i)` and the
/// softmax responsibilities `r_i = eta_i exp(s_i) / sum`.
///
/// Stabilized by factoring out `max(s_0, s_1)` only; `eta` is bounded away
/// from zero by clipping, so `ln(eta_0 + eta_1)` is evaluated exactly when
/// `s_0 == s_1`.
fn loss_row(params: &TiltParams, t: &[f64], eta: [f64; 2]) -> (f64, [f64; 2]) {
    let s = [params.exponent(t, 0), params.exponent(t, 1)];
    let m = s[0].max(s[1]);
    let a = [eta[0] * (s[0] - m).exp(), eta[1] * (s[1] - m).exp()];
    let total = a[0] + a[1];
    (m + total.ln(), [a[0] / total, a[1] / total])
}

/// Loss term `L = sum_j mass_j log( sum_i eta_i(x_j) exp(theta_i . T(x_j) + beta_i) )`.
pub fn batch_loss(params: &TiltParams, target: &TargetBatch) -> Result<f64> {
    check_dim(params, target.dim)?;
    let mut total = 0.0;
    for j in 0..target.len() {
        let (l, _) = loss_row(params, target.stat(j), target.eta[j]);
        if !l.is_finite() {
            return Err(Error::NonFinite {
                row: j,
                message: format!("target loss term is {l}"),
            });
        }
        total += target.mass.row(j) * l;
    }
    Ok(total * target.mass.scale(target.len()))
}

/// Normalizer `N = sum_j mass_j exp(theta_{u_j} . T(x_j) + beta_{u_j})`.
pub fn batch_normalizer(params: &TiltParams, source: &SourceBatch) -> Result<f64> {
    check_dim(params, source.dim)?;
    let mut total = 0.0;
    for j in 0..source.len() {
        total += source.mass.row(j) * checked_exp(params.exponent(source.stat(j), source.labels[j]))?;
    }
    Ok(total * source.mass.scale(source.len()))
}

/// `O = -L + log N + lambda N + lambda / N`.
pub fn objective(loss: f64, normalizer: f64, lambda: f64) -> Result<f64> {
    if normalizer.is_nan() || normalizer <= 0.0 {
        return Err(Error::invalid(format!(
            "normalizer must be positive, got {normalizer}"
        )));
    }
    Ok(-loss + normalizer.ln() + lambda * normalizer + lambda / normalizer)
}

/// Objective, its parts, and optionally the gradient in the flat layout
/// `[theta0.., beta0, theta1.., beta1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub loss: f64,
    pub normalizer: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Evaluates the objective on a source/target batch pair.
pub fn evaluate(
    params: &TiltParams,
    source: &SourceBatch,
    target: &TargetBatch,
    lambda: f64,
    with_gradient: bool,
) -> Result<Evaluation> {
    check_dim(params, target.dim)?;
    check_dim(params, source.dim)?;
    let p = params.dim();
    // Offsets of (theta_i, beta_i) in the flat layout.
    let theta_at = [0, p + 1];
    let beta_at = [p, 2 * p + 1];

    let mut loss = 0.0;
    let mut d_loss = vec![0.0; 2 * p + 2];
    for j in 0..target.len() {
        let t = target.stat(j);
        let (l, r) = loss_row(params, t, target.eta[j]);
        if !l.is_finite() {
            return Err(Error::NonFinite {
                row: j,
                message: format!("target loss term is {l}"),
            });
        }
        let m = target.mass.row(j);
        loss += m * l;
        if with_gradient {
            for i in 0..2 {
                let g = m * r[i];
                for (k, tk) in t.iter().enumerate() {
                    d_loss[theta_at[i] + k] += g * tk;
                }
                d_loss[beta_at[i]] += g;
            }
        }
    }

    let mut normalizer = 0.0;
    let mut d_norm = vec![0.0; 2 * p + 2];
    for j in 0..source.len() {
        let t = source.stat(j);
        let u = source.labels[j];
        let e = source.mass.row(j) * checked_exp(params.exponent(t, u))?;
        normalizer += e;
        if with_gradient {
            let i = u as usize;
            for (k, tk) in t.iter().enumerate() {
                d_norm[theta_at[i] + k] += e * tk;
            }
            d_norm[beta_at[i]] += e;
        }
    }

    let target_scale = target.mass.scale(target.len());
    let source_scale = source.mass.scale(source.len());
    loss *= target_scale;
    normalizer *= source_scale;
    d_loss.iter_mut().for_each(|v| *v *= target_scale);
    d_norm.iter_mut().for_each(|v| *v *= source_scale);
    let value = objective(loss, normalizer, lambda)?;
    let gradient = with_gradient.then(|| {
        let dn = 1.0 / normalizer + lambda - lambda / (normalizer * normalizer);
        d_loss
            .iter()
            .zip(&d_norm)
            .map(|(dl, dnorm)| -dl + dn * dnorm)
            .collect()
    });
    Ok(Evaluation {
        objective: value,
        loss,
        normalizer,
        gradient,
    })
}

/// Analytic gradient of the objective in the flat layout
/// `[theta0.., beta0, theta1.., beta1]`.
pub fn gradient(
    params: &TiltParams,
    source: &SourceBatch,
    target: &TargetBatch,
    lambda: f64,
) -> Result<Vec<f64>> {
    Ok(evaluate(params, source, target, lambda, true)?
        .gradient
        .expect("gradient requested"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub objective: f64,
    pub loss: f64,
    pub normalizer: f64,
}

/// Optimization history.
///
/// `steps` holds the minibatch objective at every step; `checks` holds the
/// full-data objective at step 0 and every [`CHECK_EVERY`] steps after.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitTrace {
    pub steps: Vec<StepRecord>,
    pub checks: Vec<StepRecord>,
    pub converged: bool,
    pub steps_taken: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Normalized parameters (intercepts are `alpha`).
    pub params: TiltParams,
    /// Iterate before finalization (intercepts are `beta`).
    pub raw_params: TiltParams,
    pub trace: FitTrace,
    /// Full-source normalizer at the final `beta` iterate.
    pub final_normalizer: f64,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

fn record(step: usize, e: &Evaluation) -> StepRecord {
    StepRecord {
        step,
        objective: e.objective,
        loss: e.loss,
        normalizer: e.normalizer,
    }
}

fn diverged(step: usize, err: Error, trace: &FitTrace) -> Error {
    Error::Divergence {
        message: format!("objective not finite at step {step}: {err}"),
        trace: Some(Box::new(trace.clone())),
    }
}

/// Runs ExTRA on a labeled source sample and an unlabeled target sample.
///
/// Starts from `theta = 0, beta = 0`. Each step draws `batch_size` source and
/// target rows uniformly with replacement and takes one plain gradient step.
/// Every [`CHECK_EVERY`] steps the objective is evaluated on all rows; the
/// run stops once an exponential moving average (decay 0.9) of the
/// improvement between checks stays below `tol` for `patience` consecutive
/// checks, or after `max_steps`.
pub fn fit_extra<C>(
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    clf: &C,
    spec: &SufficientStatistic,
    cfg: &ExtraConfig,
) -> Result<FitResult>
where
    C: ProbabilisticClassifier + ?Sized,
{
    if source.dim() != target.dim() {
        return Err(Error::Shape {
            what: "target dimension",
            expected: source.dim(),
            found: target.dim(),
        });
    }
    let full_source = SourceBatch::from_dataset(source, spec)?;
    let full_target = TargetBatch::from_dataset(target, clf, spec)?;
    fit_prepared(&full_source, &full_target, cfg)
}

/// [`fit_extra`] on already prepared batches.
pub fn fit_prepared(
    full_source: &SourceBatch,
    full_target: &TargetBatch,
    cfg: &ExtraConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if full_source.dim != full_target.dim {
        return Err(Error::Shape {
            what: "statistic dimension",
            expected: full_source.dim,
            found: full_target.dim,
        });
    }
    let p = full_source.dim;
    let mut params = TiltParams::zeros(p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = FitTrace::default();

    let start = evaluate(&params, full_source, full_target, cfg.lambda, false)
        .map_err(|e| diverged(0, e, &trace))?;
    trace.checks.push(record(0, &start));
    let mut previous = start.objective;
    let mut ema: Option<f64> = None;
    let mut stalled = 0;

    let mut src_idx = vec![0usize; cfg.batch_size];
    let mut tgt_idx = vec![0usize; cfg.batch_size];
    for step in 1..=cfg.max_steps {
        src_idx.fill_with(|| rng.random_range(0..full_source.len()));
        tgt_idx.fill_with(|| rng.random_range(0..full_target.len()));
        let src = full_source.select(&src_idx);
        let tgt = full_target.select(&tgt_idx);

        let eval = evaluate(&params, &src, &tgt, cfg.lambda, true)
            .map_err(|e| diverged(step, e, &trace))?;
        if !eval.objective.is_finite() {
            return Err(diverged(
                step,
                Error::invalid(format!("minibatch objective {}", eval.objective)),
                &trace,
            ));
        }
        trace.steps.push(record(step, &eval));
        trace.steps_taken = step;

        let grad = eval.gradient.expect("gradient requested");
        let mut flat = params.to_flat();
        for (v, g) in flat.iter_mut().zip(&grad) {
            *v -= cfg.learning_rate * g;
        }
        params = TiltParams::from_flat(&flat, false).map_err(|e| diverged(step, e, &trace))?;

        if step % CHECK_EVERY == 0 {
            let full = evaluate(&params, full_source, full_target, cfg.lambda, false)
                .map_err(|e| diverged(step, e, &trace))?;
            if !full.objective.is_finite() {
                return Err(diverged(
                    step,
                    Error::invalid(format!("full objective {}", full.objective)),
                    &trace,
                ));
            }
            trace.checks.push(record(step, &full));
            let improvement = previous - full.objective;
            previous = full.objective;
            let smoothed = match ema {
                None => improvement,
                Some(e) => EMA_DECAY * e + (1.0 - EMA_DECAY) * improvement,
            };
            ema = Some(smoothed);
            stalled = if smoothed < cfg.tol { stalled + 1 } else { 0 };
            if stalled >= cfg.patience {
                trace.converged = true;
                break;
            }
        }
    }

    let final_normalizer = batch_normalizer(&params, full_source)
        .map_err(|e| diverged(trace.steps_taken, e, &trace))?;
    let band = 1.0 + 10.0 * cfg.lambda;
    if !(final_normalizer >= 1.0 / band && final_normalizer <= band) {
        return Err(Error::Divergence {
            message: format!(
                "final normalizer {final_normalizer} left the band [{}, {band}]",
                1.0 / band
            ),
            trace: Some(Box::new(trace)),
        });
    }
    let shift = final_normalizer.ln();
    let finalized = TiltParams {
        theta0: params.theta0.clone(),
        alpha0: params.alpha0 - shift,
        theta1: params.theta1.clone(),
        alpha1: params.alpha1 - shift,
        normalized: true,
    };
    Ok(FitResult {
        params: finalized,
        raw_params: params,
        trace,
        final_normalizer,
    })
}

/// Per-row weights `w_j = exp(theta_{u_j} . T(x_j) + alpha_{u_j})`.
pub fn weight_table(
    params: &TiltParams,
    spec: &SufficientStatistic,
    data: &LabeledDataset,
) -> Result<Vec<f64>> {
    if !params.normalized {
        return Err(Error::invalid(
            "weight_table needs normalized parameters (alpha, not beta)",
        ));
    }
    let p = spec.output_dim(data.dim())?;
    check_dim(params, p)?;
    let mut buf = Vec::with_capacity(p);
    data.rows()
        .map(|(x, u)| {
            spec.eval_into(x, &mut buf)?;
            checked_exp(dot(params.theta(u), &buf) + params.intercept(u))
        })
        .collect()
}
