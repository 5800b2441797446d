#![allow(dead_code)]

use extra_tilt::rtb::{FeatureLaw, MarketModel};
use extra_tilt::tilt::{DiscretePopulation, TiltParams};

/// Two-point population with a shift in both classes.
pub fn two_point() -> DiscretePopulation {
    DiscretePopulation::scalar(
        &[0.0, 1.0],
        vec![[0.4, 0.1], [0.3, 0.2]],
        vec![[0.2, 0.1], [0.4, 0.3]],
    )
    .unwrap()
}

/// Well-specified instance with anchor sets {0, 1} for class 1 and {2, 3}
/// for class 0 under T(x) = x.
pub fn anchor_instance() -> DiscretePopulation {
    DiscretePopulation::scalar(
        &[0.0, 1.0, 2.0, 3.0],
        vec![[0.0, 0.2], [0.0, 0.2], [0.3, 0.0], [0.3, 0.0]],
        vec![[0.0, 0.2], [0.0, 0.4], [4.0 / 15.0, 0.0], [2.0 / 15.0, 0.0]],
    )
    .unwrap()
}

pub fn anchor_truth() -> TiltParams {
    TiltParams::new(vec![0.5f64.ln()], (32.0f64 / 9.0).ln(), vec![2.0f64.ln()], 0.0).unwrap()
}

/// Exact weights of the anchor instance, keyed by (x, u).
pub const ANCHOR_WEIGHTS: [(f64, u8, f64); 4] = [
    (0.0, 1, 1.0),
    (1.0, 1, 2.0),
    (2.0, 0, 8.0 / 9.0),
    (3.0, 0, 4.0 / 9.0),
];

/// Source pmf of the anchor instance used for both domains. Its anchor sets
/// make the unit weights the unique optimum.
pub fn no_shift_instance() -> DiscretePopulation {
    let pmf = vec![[0.0, 0.2], [0.0, 0.2], [0.3, 0.0], [0.3, 0.0]];
    DiscretePopulation::scalar(&[0.0, 1.0, 2.0, 3.0], pmf.clone(), pmf).unwrap()
}

/// Selection-biased market: utility-1 auctions are pricier, price does not
/// depend on x, so the exact weights depend on u only.
pub fn biased_market(law: FeatureLaw) -> MarketModel {
    MarketModel {
        feature_dim: 2,
        utility_weights: vec![1.5, -1.0],
        utility_bias: -0.5,
        price_loc_weights: vec![0.0, 0.0],
        price_coupling: 1.5,
        price_scale: 1.0,
        bid: 1.0,
        feature_law: law,
    }
}

pub fn grid_law() -> FeatureLaw {
    FeatureLaw::Grid {
        values: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        probs: vec![0.1, 0.2, 0.4, 0.2, 0.1],
    }
}

/// Standard error of a Bernoulli mean.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Scalar market with `pi = 0.1`, `F0(b) = 0.4` and `F1(b) = 0.8`.
///
/// With the price independent of x, `F_u(b) = Phi((ln b - delta u) / sigma)`,
/// so `ln b = Phi^-1(0.4)` and `delta = ln b - Phi^-1(0.8)`, which is
/// negative: utility-1 auctions are cheaper and win more often.
pub fn eq3_market() -> MarketModel {
    use statrs::distribution::{ContinuousCDF, Normal};
    let phi = Normal::standard();
    let log_bid = phi.inverse_cdf(0.4);
    MarketModel {
        feature_dim: 1,
        utility_weights: vec![0.0],
        utility_bias: (1.0f64 / 9.0).ln(),
        price_loc_weights: vec![0.0],
        price_coupling: log_bid - phi.inverse_cdf(0.8),
        price_scale: 1.0,
        bid: log_bid.exp(),
        feature_law: FeatureLaw::StandardNormal,
    }
}
