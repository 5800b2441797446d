//! Exact joint probability tables over a finite feature alphabet.
//!
//! A [`DiscretePopulation`] is the brute-force oracle for everything else in
//! the crate: true density ratios, target marginals and KL divergences can be
//! computed on it exactly, and finite samples can be drawn from it.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, UnlabeledDataset};
use super::params::{checked_exp, TiltParams};
use super::statistic::SufficientStatistic;
use crate::error::{Error, Result};

const PMF_TOL: f64 = 1e-12;

/// Which of the two domains to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// Joint tables `p(x, u)` and `q(x, u)` on a shared alphabet. Index `[i][u]`
/// holds the mass of alphabet point `i` with label `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPopulation", into = "RawPopulation")]
pub struct DiscretePopulation {
    alphabet: Vec<Vec<f64>>,
    source_pmf: Vec<[f64; 2]>,
    target_pmf: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct RawPopulation {
    alphabet: Vec<Vec<f64>>,
    source_pmf: Vec<[f64; 2]>,
    target_pmf: Vec<[f64; 2]>,
}

impl TryFrom<RawPopulation> for DiscretePopulation {
    type Error = Error;
    fn try_from(raw: RawPopulation) -> Result<Self> {
        DiscretePopulation::new(raw.alphabet, raw.source_pmf, raw.target_pmf)
    }
}

impl From<DiscretePopulation> for RawPopulation {
    fn from(p: DiscretePopulation) -> Self {
        RawPopulation {
            alphabet: p.alphabet,
            source_pmf: p.source_pmf,
            target_pmf: p.target_pmf,
        }
    }
}

fn check_table(name: &str, table: &[[f64; 2]]) -> Result<()> {
    if table.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = table.iter().flatten().sum();
    if (total - 1.0).abs() > PMF_TOL {
        return Err(Error::invalid(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

impl DiscretePopulation {
    pub fn new(
        alphabet: Vec<Vec<f64>>,
        source_pmf: Vec<[f64; 2]>,
        target_pmf: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(Error::invalid("population alphabet is empty"));
        }
        for (what, t) in [("source pmf", &source_pmf), ("target pmf", &target_pmf)] {
            if t.len() != alphabet.len() {
                return Err(Error::Shape {
                    what,
                    expected: alphabet.len(),
                    found: t.len(),
                });
            }
        }
        let d = alphabet[0].len();
        if d == 0 {
            return Err(Error::invalid("alphabet points must have dimension >= 1"));
        }
        for x in &alphabet {
            if x.len() != d {
                return Err(Error::Shape {
                    what: "alphabet point",
                    expected: d,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("alphabet point has non-finite coordinates"));
            }
        }
        for (i, x) in alphabet.iter().enumerate() {
            if alphabet[..i].contains(x) {
                return Err(Error::invalid(format!("alphabet point {x:?} is repeated")));
            }
        }
        check_table("source pmf", &source_pmf)?;
        check_table("target pmf", &target_pmf)?;
        Ok(Self {
            alphabet,
            source_pmf,
            target_pmf,
        })
    }

    /// Builds a population over scalar alphabet points.
    pub fn scalar(
        points: &[f64],
        source_pmf: Vec<[f64; 2]>,
        target_pmf: Vec<[f64; 2]>,
    ) -> Result<Self> {
        Self::new(points.iter().map(|&x| vec![x]).collect(), source_pmf, target_pmf)
    }

    pub fn alphabet(&self) -> &[Vec<f64>] {
        &self.alphabet
    }

    pub fn dim(&self) -> usize {
        self.alphabet[0].len()
    }

    pub fn len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphabet.is_empty()
    }

    pub fn source_pmf(&self) -> &[[f64; 2]] {
        &self.source_pmf
    }

    pub fn target_pmf(&self) -> &[[f64; 2]] {
        &self.target_pmf
    }

    pub fn pmf(&self, domain: Domain) -> &[[f64; 2]] {
        match domain {
            Domain::Source => &self.source_pmf,
            Domain::Target => &self.target_pmf,
        }
    }

    /// Index of `x` in the alphabet, compared by exact coordinate equality.
    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.alphabet.iter().position(|a| a.as_slice() == x)
    }

    pub fn source_marginal(&self, i: usize) -> f64 {
        self.source_pmf[i][0] + self.source_pmf[i][1]
    }

    pub fn target_marginal_exact(&self, i: usize) -> f64 {
        self.target_pmf[i][0] + self.target_pmf[i][1]
    }

    /// Tilted marginal at alphabet index `i`:
    /// `sum_u p(x, u) * exp(theta_u . T(x) + alpha_u)`.
    pub fn tilted_marginal_at(
        &self,
        i: usize,
        params: &TiltParams,
        spec: &SufficientStatistic,
    ) -> Result<f64> {
        let t = spec.eval(&self.alphabet[i])?;
        let mut total = 0.0;
        for u in 0..2u8 {
            let mass = self.source_pmf[i][u as usize];
            if mass > 0.0 {
                total += mass * checked_exp(params.exponent(&t, u))?;
            }
        }
        Ok(total)
    }

    /// Draws `n` labeled rows i.i.d. from the chosen table.
    pub fn sample_labeled(&self, domain: Domain, n: usize, seed: u64) -> Result<LabeledDataset> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let cells: Vec<f64> = self.pmf(domain).iter().flatten().copied().collect();
        let dist = WeightedIndex::new(&cells)
            .map_err(|e| Error::invalid(format!("cannot sample from pmf: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let cell = dist.sample(&mut rng);
            features.extend_from_slice(&self.alphabet[cell / 2]);
            labels.push((cell % 2) as u8);
        }
        LabeledDataset::new(d, features, labels)
    }

    pub fn sample_source(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        self.sample_labeled(Domain::Source, n, seed)
    }

    /// Draws from the target table and discards the labels.
    pub fn sample_target(&self, n: usize, seed: u64) -> Result<UnlabeledDataset> {
        Ok(self.sample_labeled(Domain::Target, n, seed)?.unlabeled())
    }
}

/// Target marginal implied by the tilt model at alphabet point `x`:
/// `q_X(x) = sum_i p(x, U=i) exp(theta_i . T(x) + alpha_i)`.
pub fn target_marginal(
    pop: &DiscretePopulation,
    params: &TiltParams,
    spec: &SufficientStatistic,
    x: &[f64],
) -> Result<f64> {
    let i = pop
        .index_of(x)
        .ok_or_else(|| Error::Domain(format!("{x:?} is not in the population alphabet")))?;
    pop.tilted_marginal_at(i, params, spec)
}

/// Exact density-ratio table `w(x, u) = q(x, u) / p(x, u)`. Cells where both
/// masses vanish are `None`.
pub fn exact_weights(pop: &DiscretePopulation) -> Result<Vec<[Option<f64>; 2]>> {
    pop.source_pmf
        .iter()
        .zip(&pop.target_pmf)
        .enumerate()
        .map(|(i, (p, q))| {
            let mut row = [None, None];
            for u in 0..2 {
                row[u] = match (p[u] > 0.0, q[u] > 0.0) {
                    (true, _) => Some(q[u] / p[u]),
                    (false, false) => None,
                    (false, true) => {
                        return Err(Error::SupportViolation {
                            index: i,
                            class: u as u8,
                        })
                    }
                };
            }
            Ok(row)
        })
        .collect()
}
