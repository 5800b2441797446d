//! Exponential tilt model: datasets, sufficient statistics, parameters, the
//! weight function and the exact discrete oracle.

mod dataset;
mod params;
mod population;
mod statistic;

pub use dataset::{LabeledDataset, UnlabeledDataset};
pub use params::{checked_exp, tilt_weight, TiltParams, MAX_EXPONENT};
pub use population::{exact_weights, target_marginal, DiscretePopulation, Domain};
pub use statistic::SufficientStatistic;

pub(crate) use params::dot;
