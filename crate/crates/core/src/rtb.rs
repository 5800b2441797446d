//! First-price RTB auction stream with utility-dependent market prices.
//!
//! Each bid opportunity carries features `x`, a binary utility `u` drawn
//! from a logistic model, and a log-normal market price `m` whose location
//! shifts by `price_coupling` when `u = 1`. The bidder bids a fixed `b` and
//! only observes `u` when it wins (`m < b`). Winners form the labeled source
//! domain, all opportunities the unlabeled target domain.
//!
//! When utility and price are coupled, the win-conditional utility rate is
//! `p = pi F1(b) / F(b)` with `F = (1 - pi) F0 + pi F1`, which differs from
//! the population rate `pi` whenever `F1(b) != F0(b)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::classifier::sigmoid;
use crate::error::{Error, Result};
use crate::tilt::{dot, DiscretePopulation, LabeledDataset, UnlabeledDataset};

/// Largest alphabet [`exact_population`] will enumerate.
pub const MAX_ALPHABET: usize = 1 << 16;

/// Distribution of each feature coordinate (i.i.d. across coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureLaw {
    #[default]
    StandardNormal,
    /// Discrete coordinates: `values[k]` with probability `probs[k]`.
    Grid { values: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub feature_dim: usize,
    pub utility_weights: Vec<f64>,
    pub utility_bias: f64,
    pub price_loc_weights: Vec<f64>,
    /// Shift of log-price when `u = 1`.
    pub price_coupling: f64,
    /// Standard deviation of log-price.
    pub price_scale: f64,
    pub bid: f64,
    #[serde(default)]
    pub feature_law: FeatureLaw,
}

impl MarketModel {
    pub fn validate(&self) -> Result<()> {
        let d = self.feature_dim;
        if d == 0 {
            return Err(Error::invalid("market.feature_dim must be at least 1"));
        }
        for (name, v) in [
            ("market.utility_weights", &self.utility_weights),
            ("market.price_loc_weights", &self.price_loc_weights),
        ] {
            if v.len() != d {
                return Err(Error::invalid(format!(
                    "{name} has length {}, expected feature_dim = {d}",
                    v.len()
                )));
            }
            if v.iter().any(|w| !w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        if !self.utility_bias.is_finite() || !self.price_coupling.is_finite() {
            return Err(Error::invalid("market biases must be finite"));
        }
        if !(self.price_scale > 0.0 && self.price_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "market.price_scale must be positive, got {}",
                self.price_scale
            )));
        }
        if self.bid.is_nan() || self.bid <= 0.0 {
            return Err(Error::invalid(format!("market.bid must be positive, got {}", self.bid)));
        }
        if let FeatureLaw::Grid { values, probs } = &self.feature_law {
            if values.is_empty() || values.len() != probs.len() {
                return Err(Error::invalid("grid feature law needs matching values and probs"));
            }
            if values.iter().any(|v| !v.is_finite())
                || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            {
                return Err(Error::invalid("grid feature law has invalid entries"));
            }
            if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("grid feature probabilities must sum to 1"));
            }
        }
        Ok(())
    }

    /// `P(U = 1 | x)`.
    pub fn utility_prob(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.utility_weights, x) + self.utility_bias)
    }

    /// Location of `log M` given `x` and `u`.
    pub fn log_price_loc(&self, x: &[f64], u: u8) -> f64 {
        dot(&self.price_loc_weights, x) + self.price_coupling * f64::from(u)
    }

    /// `F_u(b | x) = P(M < b | x, U = u)`.
    pub fn win_prob(&self, x: &[f64], u: u8) -> f64 {
        let z = (self.bid.ln() - self.log_price_loc(x, u)) / self.price_scale;
        std_normal_cdf(z)
    }

    /// Conditional mean and standard deviation of the market price given
    /// `x`, marginalized over `U`.
    pub fn market_moments(&self, x: &[f64]) -> (f64, f64) {
        let pi = self.utility_prob(x);
        let s2 = self.price_scale * self.price_scale;
        let mut first = 0.0;
        let mut second = 0.0;
        for (u, w) in [(0u8, 1.0 - pi), (1u8, pi)] {
            let mu = self.log_price_loc(x, u);
            first += w * (mu + 0.5 * s2).exp();
            second += w * (2.0 * mu + 2.0 * s2).exp();
        }
        (first, (second - first * first).max(0.0).sqrt())
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    pub features: Vec<f64>,
    pub utility: u8,
    pub market_price: f64,
    pub won: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionStream {
    pub dim: usize,
    pub records: Vec<AuctionRecord>,
    pub model: MarketModel,
    pub seed: u64,
}

impl AuctionStream {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn wins(&self) -> usize {
        self.records.iter().filter(|r| r.won).count()
    }

    /// Every record with its utility. Only for held-out evaluation: the
    /// target domain is unlabeled as far as fitting is concerned.
    pub fn labeled_target(&self) -> Result<LabeledDataset> {
        let features = self.records.iter().flat_map(|r| r.features.iter().copied()).collect();
        let labels = self.records.iter().map(|r| r.utility).collect();
        LabeledDataset::new(self.dim, features, labels)
    }
}

enum FeatureSampler {
    Normal,
    Grid(Vec<f64>, WeightedIndex<f64>),
}

impl FeatureSampler {
    fn new(law: &FeatureLaw) -> Result<Self> {
        Ok(match law {
            FeatureLaw::StandardNormal => Self::Normal,
            FeatureLaw::Grid { values, probs } => Self::Grid(
                values.clone(),
                WeightedIndex::new(probs)
                    .map_err(|e| Error::invalid(format!("grid feature law: {e}")))?,
            ),
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::Normal => rng.sample(StandardNormal),
            Self::Grid(values, idx) => values[idx.sample(rng)],
        }
    }
}

/// Generates `n` bid opportunities. Deterministic in `(model, n, seed)`.
pub fn simulate_auctions(model: &MarketModel, n: usize, seed: u64) -> Result<AuctionStream> {
    model.validate()?;
    if n == 0 {
        return Err(Error::invalid("stream size must be at least 1"));
    }
    let sampler = FeatureSampler::new(&model.feature_law)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.feature_dim;
    let records = (0..n)
        .map(|_| {
            let features: Vec<f64> = (0..d).map(|_| sampler.draw(&mut rng)).collect();
            let utility = u8::from(rng.random::<f64>() < model.utility_prob(&features));
            let z: f64 = rng.sample(StandardNormal);
            let market_price =
                (model.log_price_loc(&features, utility) + model.price_scale * z).exp();
            AuctionRecord {
                won: market_price < model.bid,
                features,
                utility,
                market_price,
            }
        })
        .collect();
    Ok(AuctionStream {
        dim: d,
        records,
        model: model.clone(),
        seed,
    })
}

/// Source = won records with labels; target = all records without labels.
pub fn split_domains(stream: &AuctionStream) -> Result<(LabeledDataset, UnlabeledDataset)> {
    if stream.is_empty() {
        return Err(Error::invalid("auction stream is empty"));
    }
    let mut src_x = Vec::new();
    let mut src_u = Vec::new();
    let mut tgt_x = Vec::with_capacity(stream.len() * stream.dim);
    for r in &stream.records {
        tgt_x.extend_from_slice(&r.features);
        if r.won {
            src_x.extend_from_slice(&r.features);
            src_u.push(r.utility);
        }
    }
    if src_u.is_empty() {
        return Err(Error::EmptySource);
    }
    Ok((
        LabeledDataset::new(stream.dim, src_x, src_u)?,
        UnlabeledDataset::new(stream.dim, tgt_x)?,
    ))
}

/// Monte-Carlo estimates of the quantities in `p = pi F1(b) / F(b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateEstimate {
    /// `P(U = 1 | won)`.
    pub p_win_conditional: f64,
    /// `P(U = 1)`.
    pub pi: f64,
    /// `P(won | U = 0)`.
    pub f0: f64,
    /// `P(won | U = 1)`.
    pub f1: f64,
    pub win_rate: f64,
    /// `pi F1 / ((1 - pi) F0 + pi F1)` assembled from the estimates above.
    pub identity_rhs: f64,
    pub n: usize,
    pub n_won: usize,
}

impl WinRateEstimate {
    pub fn from_stream(stream: &AuctionStream) -> Result<Self> {
        let n = stream.len();
        let mut counts = [[0usize; 2]; 2]; // [utility][won]
        for r in &stream.records {
            counts[r.utility as usize][usize::from(r.won)] += 1;
        }
        let n_won = counts[0][1] + counts[1][1];
        if n_won == 0 {
            return Err(Error::EmptySource);
        }
        let n1 = counts[1][0] + counts[1][1];
        let n0 = n - n1;
        let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        let pi = n1 as f64 / n as f64;
        let f0 = ratio(counts[0][1], n0);
        let f1 = ratio(counts[1][1], n1);
        let identity_rhs = if n1 == 0 {
            0.0
        } else if n0 == 0 {
            1.0
        } else {
            pi * f1 / ((1.0 - pi) * f0 + pi * f1)
        };
        Ok(Self {
            p_win_conditional: counts[1][1] as f64 / n_won as f64,
            pi,
            f0,
            f1,
            win_rate: n_won as f64 / n as f64,
            identity_rhs,
            n,
            n_won,
        })
    }

    /// Binomial standard error of `p_win_conditional`.
    pub fn std_error(&self) -> f64 {
        let p = self.p_win_conditional;
        (p * (1.0 - p) / self.n_won as f64).sqrt()
    }
}

/// Simulates a fresh stream of `mc_n` records and estimates the
/// win-conditional utility rate, `pi`, `F0(b)` and `F1(b)`.
pub fn win_conditional_rate(model: &MarketModel, mc_n: usize, seed: u64) -> Result<WinRateEstimate> {
    WinRateEstimate::from_stream(&simulate_auctions(model, mc_n, seed)?)
}

/// Appends the analytic `(E[M | x], SD[M | x])` columns to every record.
pub fn market_stat_features(model: &MarketModel, stream: &AuctionStream) -> Result<AuctionStream> {
    if stream.dim != model.feature_dim {
        return Err(Error::Shape {
            what: "stream features",
            expected: model.feature_dim,
            found: stream.dim,
        });
    }
    let records = stream
        .records
        .iter()
        .map(|r| {
            let (mean, sd) = model.market_moments(&r.features);
            let mut features = r.features.clone();
            features.extend([mean, sd]);
            AuctionRecord {
                features,
                ..r.clone()
            }
        })
        .collect();
    Ok(AuctionStream {
        dim: stream.dim + 2,
        records,
        model: stream.model.clone(),
        seed: stream.seed,
    })
}

/// Exact source (winners) and target (all opportunities) tables for a model
/// with a grid feature law.
///
/// `q(x, u) = P(x) P(u | x)` and `p(x, u) = q(x, u) F_u(b | x) / P(win)`.
pub fn exact_population(model: &MarketModel) -> Result<DiscretePopulation> {
    model.validate()?;
    let FeatureLaw::Grid { values, probs } = &model.feature_law else {
        return Err(Error::invalid(
            "exact population requires a grid feature law",
        ));
    };
    let d = model.feature_dim;
    let k = values.len();
    let size = (k as u128).pow(d as u32);
    if size > MAX_ALPHABET as u128 {
        return Err(Error::invalid(format!(
            "grid alphabet of {size} points exceeds {MAX_ALPHABET}"
        )));
    }
    let size = size as usize;
    let mut alphabet = Vec::with_capacity(size);
    let mut target = Vec::with_capacity(size);
    let mut source = Vec::with_capacity(size);
    for mut code in 0..size {
        let mut x = Vec::with_capacity(d);
        let mut px = 1.0;
        for _ in 0..d {
            x.push(values[code % k]);
            px *= probs[code % k];
            code /= k;
        }
        let pi = model.utility_prob(&x);
        let q = [px * (1.0 - pi), px * pi];
        source.push([q[0] * model.win_prob(&x, 0), q[1] * model.win_prob(&x, 1)]);
        target.push(q);
        alphabet.push(x);
    }
    let win: f64 = source.iter().flatten().sum();
    if win.is_nan() || win <= 0.0 {
        return Err(Error::EmptySource);
    }
    let q_total: f64 = target.iter().flatten().sum();
    for row in &mut source {
        row.iter_mut().for_each(|v| *v /= win);
    }
    for row in &mut target {
        row.iter_mut().for_each(|v| *v /= q_total);
    }
    DiscretePopulation::new(alphabet, source, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> MarketModel {
        MarketModel {
            feature_dim: 2,
            utility_weights: vec![1.0, -0.5],
            utility_bias: -1.0,
            price_loc_weights: vec![0.3, 0.0],
            price_coupling: 0.8,
            price_scale: 0.7,
            bid: 1.2,
            feature_law: FeatureLaw::StandardNormal,
        }
    }

    #[test]
    fn validation_catches_bad_models() {
        assert!(model().validate().is_ok());
        let mut m = model();
        m.price_scale = 0.0;
        assert!(m.validate().is_err());
        let mut m = model();
        m.utility_weights.pop();
        assert!(m.validate().is_err());
        let mut m = model();
        m.feature_law = FeatureLaw::Grid {
            values: vec![0.0, 1.0],
            probs: vec![0.5, 0.6],
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn won_iff_price_below_bid_and_determinism() {
        let s = simulate_auctions(&model(), 5_000, 9).unwrap();
        assert!(s.records.iter().all(|r| r.won == (r.market_price < s.model.bid)));
        assert_eq!(s, simulate_auctions(&model(), 5_000, 9).unwrap());
        assert_ne!(s, simulate_auctions(&model(), 5_000, 10).unwrap());
    }

    #[test]
    fn split_counts() {
        let mut s = simulate_auctions(&model(), 10, 1).unwrap();
        for (i, r) in s.records.iter_mut().enumerate() {
            r.won = i % 3 == 0 || i == 4;
        }
        let (src, tgt) = split_domains(&s).unwrap();
        assert_eq!((src.len(), tgt.len()), (5, 10));

        s.records.iter_mut().for_each(|r| r.won = false);
        assert!(matches!(split_domains(&s), Err(Error::EmptySource)));
    }

    #[test]
    fn huge_bid_wins_everything() {
        let mut m = model();
        m.bid = 1e12;
        let s = simulate_auctions(&m, 2_000, 3).unwrap();
        assert!(s.records.iter().all(|r| r.won));
        let (src, tgt) = split_domains(&s).unwrap();
        assert_eq!(src.unlabeled(), tgt);
    }

    #[test]
    fn market_moments_closed_form() {
        let mut m = model();
        m.price_coupling = 0.0;
        m.price_loc_weights = vec![0.0, 0.0];
        let s2 = m.price_scale * m.price_scale;
        for x in [[0.0, 0.0], [2.0, -1.0]] {
            let (mean, sd) = m.market_moments(&x);
            assert_relative_eq!(mean, (s2 / 2.0).exp(), epsilon = 1e-12);
            assert_relative_eq!(sd, ((2.0 * s2).exp() - s2.exp()).sqrt(), epsilon = 1e-12);
        }

        let m = model();
        let s = simulate_auctions(&m, 50, 2).unwrap();
        let aug = market_stat_features(&m, &s).unwrap();
        assert_eq!(aug.dim, 4);
        assert_eq!(aug.records[0].features.len(), 4);
        assert_eq!(&aug.records[0].features[..2], &s.records[0].features[..]);
    }

    #[test]
    fn coupled_mean_increases_with_utility_probability() {
        let mut m = model();
        m.price_loc_weights = vec![0.0, 0.0];
        // x_hi has the larger utility probability.
        let (x_lo, x_hi) = ([-1.0, 0.0], [1.0, 0.0]);
        assert!(m.utility_prob(&x_hi) > m.utility_prob(&x_lo));
        assert!(m.market_moments(&x_hi).0 > m.market_moments(&x_lo).0);
        m.price_coupling = 0.0;
        assert_relative_eq!(m.market_moments(&x_hi).0, m.market_moments(&x_lo).0);
    }

    #[test]
    fn exact_population_marginals() {
        let mut m = model();
        m.feature_law = FeatureLaw::Grid {
            values: vec![-1.0, 0.0, 1.0],
            probs: vec![0.25, 0.5, 0.25],
        };
        let pop = exact_population(&m).unwrap();
        assert_eq!(pop.len(), 9);
        // Target marginal over x is the grid product law.
        let i = pop.index_of(&[0.0, 1.0]).unwrap();
        assert_relative_eq!(pop.target_marginal_exact(i), 0.125, epsilon = 1e-14);
        assert!(exact_population(&model()).is_err());
    }
}
