//! End-to-end ExTRA fits on discrete populations with known weights.

mod common;

use extra_tilt::classifier::{oracle_classifier, DEFAULT_CLIP_EPSILON};
use extra_tilt::evaluation::discrete_kl;
use extra_tilt::fit::{
    batch_loss, batch_normalizer, evaluate, fit_extra, weight_table, ExtraConfig, SourceBatch,
    TargetBatch,
};
use extra_tilt::tilt::{exact_weights, DiscretePopulation, SufficientStatistic, TiltParams};

const N: usize = 50_000;

fn fit_population(pop: &DiscretePopulation, seed: u64) -> (extra_tilt::fit::FitResult, extra_tilt::tilt::LabeledDataset) {
    let source = pop.sample_source(N, seed).unwrap();
    let target = pop.sample_target(N, seed + 1).unwrap();
    let clf = oracle_classifier(pop, DEFAULT_CLIP_EPSILON).unwrap();
    let result = fit_extra(
        &source,
        &target,
        &clf,
        &SufficientStatistic::Identity,
        &ExtraConfig::default(),
    )
    .unwrap();
    (result, source)
}

#[test]
fn anchor_instance_weights_are_recovered() {
    let pop = common::anchor_instance();
    let (result, source) = fit_population(&pop, 11);
    let spec = SufficientStatistic::Identity;
    let weights = weight_table(&result.params, &spec, &source).unwrap();
    for (x, u, exact) in common::ANCHOR_WEIGHTS {
        let (_, w) = source
            .rows()
            .zip(&weights)
            .find(|((row, label), _)| row[0] == x && *label == u)
            .unwrap();
        let rel = (w - exact).abs() / exact;
        assert!(rel < 0.10, "w({x},{u}) = {w}, exact {exact}, rel {rel}");
    }
    // All rows in a cell share one weight.
    let distinct: std::collections::BTreeSet<u64> = weights.iter().map(|w| w.to_bits()).collect();
    assert_eq!(distinct.len(), 4);

    let kl = discrete_kl(&pop, &result.params, &spec).unwrap();
    assert!(kl.kl_fitted < 0.01 && kl.kl_fitted < kl.kl_unweighted, "{kl:?}");

    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    assert!((mean - 1.0).abs() < 1e-9, "mean weight {mean}");
}

#[test]
fn no_shift_gives_unit_weights() {
    let pop = common::no_shift_instance();
    let (result, source) = fit_population(&pop, 5);
    let spec = SufficientStatistic::Identity;
    let weights = weight_table(&result.params, &spec, &source).unwrap();
    let (lo, hi) = weights
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), w| (lo.min(*w), hi.max(*w)));
    assert!(lo >= 0.9 && hi <= 1.1, "weights span [{lo}, {hi}]");
    let src = SourceBatch::from_dataset(&source, &spec).unwrap();
    let n = batch_normalizer(&result.params, &src).unwrap();
    assert!((0.95..=1.05).contains(&n), "normalizer {n}");
}

#[test]
fn fits_are_bit_identical_for_a_fixed_seed() {
    let pop = common::two_point();
    let source = pop.sample_source(5_000, 1).unwrap();
    let target = pop.sample_target(5_000, 2).unwrap();
    let clf = oracle_classifier(&pop, DEFAULT_CLIP_EPSILON).unwrap();
    let cfg = ExtraConfig {
        max_steps: 2_000,
        ..ExtraConfig::default()
    };
    let spec = SufficientStatistic::Identity;
    let a = fit_extra(&source, &target, &clf, &spec, &cfg).unwrap();
    let b = fit_extra(&source, &target, &clf, &spec, &cfg).unwrap();
    assert_eq!(a, b);
    let c = fit_extra(&source, &target, &clf, &spec, &ExtraConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.raw_params, c.raw_params);
}

#[test]
fn objective_decreases_over_the_first_hundred_steps() {
    for pop in [common::anchor_instance(), common::two_point()] {
        let source = pop.sample_source(N, 3).unwrap();
        let target = pop.sample_target(N, 4).unwrap();
        let clf = oracle_classifier(&pop, DEFAULT_CLIP_EPSILON).unwrap();
        let cfg = ExtraConfig {
            max_steps: 100,
            ..ExtraConfig::default()
        };
        let r = fit_extra(&source, &target, &clf, &SufficientStatistic::Identity, &cfg).unwrap();
        let checks = &r.trace.checks;
        assert_eq!(checks.len(), 2);
        assert_eq!(checks[0].objective, 2.0 * cfg.lambda);
        assert!(checks[1].objective < checks[0].objective, "{checks:?}");
        assert_eq!(r.trace.steps.len(), 100);
        assert!(!r.converged());
    }
}

#[test]
fn fitted_weights_improve_kl_on_a_shifted_population() {
    let pop = common::two_point();
    let (result, source) = fit_population(&pop, 21);
    let spec = SufficientStatistic::Identity;
    let kl = discrete_kl(&pop, &result.params, &spec).unwrap();
    assert!(kl.kl_fitted < kl.kl_unweighted, "{kl:?}");
    let w = weight_table(&result.params, &spec, &source).unwrap();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    assert!((0.95..=1.05).contains(&mean));
}

#[test]
fn loss_at_exact_parameters_matches_its_population_value() {
    // Monte-Carlo oracle: the minibatch loss averaged over independent target
    // batches agrees with the exact expectation under q_X.
    let pop = common::anchor_instance();
    let spec = SufficientStatistic::Identity;
    let clf = oracle_classifier(&pop, DEFAULT_CLIP_EPSILON).unwrap();
    let mut truth = common::anchor_truth();
    truth.normalized = false;
    let exact = batch_loss(&truth, &TargetBatch::from_population(&pop, &clf, &spec).unwrap()).unwrap();

    let batches = 200;
    let values: Vec<f64> = (0..batches)
        .map(|b| {
            let t = pop.sample_target(256, 1000 + b).unwrap();
            batch_loss(&truth, &TargetBatch::from_dataset(&t, &clf, &spec).unwrap()).unwrap()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / batches as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let se = (var / batches as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "mean {mean}, exact {exact}, se {se}");
}

#[test]
fn normalizer_at_exact_parameters_is_one_in_expectation() {
    let pop = common::anchor_instance();
    let spec = SufficientStatistic::Identity;
    let truth = common::anchor_truth();
    let pop_n = batch_normalizer(&truth, &SourceBatch::from_population(&pop, &spec).unwrap()).unwrap();
    assert!((pop_n - 1.0).abs() < 1e-12);

    let n = 50_000;
    let source = pop.sample_source(n, 77).unwrap();
    let sample_n = batch_normalizer(&truth, &SourceBatch::from_dataset(&source, &spec).unwrap()).unwrap();
    // Exact variance of w under p.
    let w = exact_weights(&pop).unwrap();
    let second: f64 = pop
        .source_pmf()
        .iter()
        .zip(&w)
        .flat_map(|(p, w)| (0..2).map(move |u| p[u] * w[u].unwrap_or(0.0).powi(2)))
        .sum();
    let se = ((second - 1.0) / n as f64).sqrt();
    assert!((sample_n - 1.0).abs() < 3.0 * se, "N = {sample_n}, se {se}");
}

#[test]
fn zero_parameter_objective_is_twice_lambda() {
    let pop = common::two_point();
    let spec = SufficientStatistic::Identity;
    let clf = oracle_classifier(&pop, DEFAULT_CLIP_EPSILON).unwrap();
    let source = pop.sample_source(1_000, 1).unwrap();
    let target = pop.sample_target(1_000, 2).unwrap();
    let src = SourceBatch::from_dataset(&source, &spec).unwrap();
    let tgt = TargetBatch::from_dataset(&target, &clf, &spec).unwrap();
    for lambda in [0.5, 1.0, 3.0] {
        let e = evaluate(&TiltParams::zeros(1), &src, &tgt, lambda, false).unwrap();
        assert_eq!(e.loss, 0.0);
        assert!((e.objective - 2.0 * lambda).abs() < 1e-10);
    }
}
