//! Monte-Carlo checks of the auction simulator against closed forms.

mod common;

use common::binomial_se;
use extra_tilt::classifier::sigmoid;
use extra_tilt::rtb::{
    exact_population, market_stat_features, simulate_auctions, split_domains,
    win_conditional_rate, AuctionRecord, AuctionStream, FeatureLaw, MarketModel,
};
use extra_tilt::Error;
use statrs::distribution::{ContinuousCDF, Normal};

fn flat_market(bid: f64, coupling: f64) -> MarketModel {
    MarketModel {
        feature_dim: 2,
        utility_weights: vec![0.8, -0.4],
        utility_bias: -1.0,
        price_loc_weights: vec![0.0, 0.0],
        price_coupling: coupling,
        price_scale: 0.8,
        bid,
        feature_law: FeatureLaw::StandardNormal,
    }
}

#[test]
fn uncoupled_win_rate_matches_the_lognormal_cdf() {
    let model = flat_market(1.3, 0.0);
    let n = 100_000;
    let stream = simulate_auctions(&model, n, 1).unwrap();
    let rate = stream.wins() as f64 / n as f64;
    let exact = Normal::standard().cdf(model.bid.ln() / model.price_scale);
    assert!((rate - exact).abs() < 3.0 * binomial_se(exact, n), "{rate} vs {exact}");
}

#[test]
fn base_rate_follows_the_utility_bias() {
    let model = MarketModel {
        utility_weights: vec![0.0, 0.0],
        utility_bias: -3.0,
        ..flat_market(1.0, 0.0)
    };
    let n = 100_000;
    let stream = simulate_auctions(&model, n, 2).unwrap();
    let rate = stream.records.iter().filter(|r| r.utility == 1).count() as f64 / n as f64;
    let exact = sigmoid(-3.0);
    assert!((exact - 0.0474).abs() < 1e-4);
    assert!((rate - exact).abs() < 3.0 * binomial_se(exact, n), "{rate} vs {exact}");
}

#[test]
fn conditional_rate_identity_holds() {
    let model = common::eq3_market();
    let est = win_conditional_rate(&model, 200_000, 3).unwrap();
    let exact: f64 = 0.1 * 0.8 / (0.9 * 0.4 + 0.1 * 0.8);
    assert!((exact - 0.181818).abs() < 1e-6);
    let se = est.std_error();
    assert!((est.p_win_conditional - exact).abs() < 3.0 * se, "{est:?}");
    // The identity also holds between the estimated pieces.
    assert!((est.p_win_conditional - est.identity_rhs).abs() < 1e-12);
    let n0 = ((1.0 - est.pi) * est.n as f64).round() as usize;
    let n1 = est.n - n0;
    assert!((est.f0 - 0.4).abs() < 3.0 * binomial_se(0.4, n0), "{est:?}");
    assert!((est.f1 - 0.8).abs() < 3.0 * binomial_se(0.8, n1), "{est:?}");
}

#[test]
fn no_bias_without_coupling_or_with_a_huge_bid() {
    for (model, seed) in [
        (flat_market(1.0, 0.0), 4),
        (flat_market(1e12, 1.5), 5),
    ] {
        let est = win_conditional_rate(&model, 200_000, seed).unwrap();
        assert!(
            (est.p_win_conditional - est.pi).abs() < 3.0 * est.std_error(),
            "{est:?}"
        );
    }
}

#[test]
fn pricier_utility_lowers_the_winners_rate() {
    let est = win_conditional_rate(&flat_market(1.0, 1.5), 100_000, 6).unwrap();
    assert!(est.f1 < est.f0);
    assert!(est.p_win_conditional + 3.0 * est.std_error() < est.pi, "{est:?}");
}

#[test]
fn split_counts_and_degenerate_streams() {
    let record = |x: f64, won: bool| AuctionRecord {
        features: vec![x],
        utility: u8::from(x > 0.5),
        market_price: if won { 0.5 } else { 2.0 },
        won,
    };
    let stream = AuctionStream {
        dim: 1,
        records: (0..10).map(|i| record(i as f64 / 10.0, i % 5 < 2)).collect(),
        model: common::eq3_market(),
        seed: 0,
    };
    let (source, target) = split_domains(&stream).unwrap();
    assert_eq!((source.len(), target.len()), (4, 10));

    let lost = AuctionStream {
        records: stream.records.iter().map(|r| record(r.features[0], false)).collect(),
        ..stream.clone()
    };
    assert!(matches!(split_domains(&lost), Err(Error::EmptySource)));

    let all = simulate_auctions(&flat_market(1e12, 1.0), 500, 7).unwrap();
    let (source, target) = split_domains(&all).unwrap();
    assert_eq!(source.features(), target.features());
}

#[test]
fn market_features_match_the_sampled_price_moments() {
    let model = MarketModel {
        feature_law: FeatureLaw::Grid {
            values: vec![0.5],
            probs: vec![1.0],
        },
        price_loc_weights: vec![0.2, -0.1],
        ..flat_market(1.0, 0.6)
    };
    let n = 200_000;
    let stream = simulate_auctions(&model, n, 8).unwrap();
    let augmented = market_stat_features(&model, &stream).unwrap();
    assert_eq!(augmented.dim, 4);
    let (mean, sd) = (augmented.records[0].features[2], augmented.records[0].features[3]);
    let prices: Vec<f64> = stream.records.iter().map(|r| r.market_price).collect();
    let mc_mean = prices.iter().sum::<f64>() / n as f64;
    let mc_sd = (prices.iter().map(|m| (m - mc_mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((mc_mean - mean).abs() < 4.0 * sd / (n as f64).sqrt(), "{mc_mean} vs {mean}");
    assert!((mc_sd - sd).abs() / sd < 0.05, "{mc_sd} vs {sd}");
}

#[test]
fn exact_population_matches_sampled_domains() {
    let model = common::biased_market(common::grid_law());
    let pop = exact_population(&model).unwrap();
    let n = 200_000;
    let stream = simulate_auctions(&model, n, 9).unwrap();
    let (source, _) = split_domains(&stream).unwrap();
    // Winners' frequency of the most likely source cell.
    let (best, cell) = pop
        .source_pmf()
        .iter()
        .enumerate()
        .flat_map(|(i, p)| [(i, 0u8, p[0]), (i, 1u8, p[1])])
        .map(|(i, u, p)| ((i, u), p))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let x = &pop.alphabet()[best.0];
    let hits = source.rows().filter(|(r, u)| r == &x.as_slice() && *u == best.1).count();
    let freq = hits as f64 / source.len() as f64;
    assert!((freq - cell).abs() < 3.0 * binomial_se(cell, source.len()), "{freq} vs {cell}");
}
