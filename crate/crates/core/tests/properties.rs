//! Property tests for the estimator algebra and the CSV round trip.

use std::collections::BTreeMap;

use proptest::prelude::*;
use stratest_core::allocation::{Allocation, AllocationMethod};
use stratest_core::estimators::{
    estimate_ma_srs, estimate_ma_stratified, estimate_oracle, estimate_subset, EstimateOptions,
};
use stratest_core::population::{
    load_population, write_population_csv, ColumnMapping, Mode, PopulationTable, StrataAssignment,
    UnitRecord,
};
use stratest_core::rng::Stream;
use stratest_core::sampling::{srs_sample, stratified_sample, SampleDraw};

fn finite(range: std::ops::Range<f64>) -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL.prop_map(move |v| {
        let span = range.end - range.start;
        range.start + (v.abs() % 1.0) * span
    })
}

/// A two-arm population of 2n units with strata alternating by index.
fn build_pop(ys: &[f64], yhats: &[f64]) -> (PopulationTable, StrataAssignment) {
    let n = ys.len();
    let units: Vec<UnitRecord> = (0..n)
        .map(|i| UnitRecord::new(format!("u{i:03}"), (i % 2) as u8, yhats[i], Some(ys[i])))
        .collect();
    let pop = PopulationTable::new(units, Mode::TwoArm).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| 1 + (i / 2) % 2).collect();
    let strata = StrataAssignment::from_indices(&pop, &labels).unwrap();
    (pop, strata)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_equivariance_of_ate_estimators(
        ys in prop::collection::vec(finite(-5.0..5.0), 16),
        yhats in prop::collection::vec(finite(-5.0..5.0), 16),
        a in finite(0.1..3.0),
        b in finite(-4.0..4.0),
        seed in 0u64..1000,
    ) {
        let (pop, strata) = build_pop(&ys, &yhats);
        let mapped: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
        let mapped_hat: Vec<f64> = yhats.iter().map(|y| a * y + b).collect();
        let (pop2, strata2) = build_pop(&mapped, &mapped_hat);
        let opts = EstimateOptions::default();

        let o1 = estimate_oracle(&pop, &opts).unwrap().estimate;
        let o2 = estimate_oracle(&pop2, &opts).unwrap().estimate;
        prop_assert!((o2 - a * o1).abs() <= 1e-9 * (1.0 + o1.abs()));

        let budgets = BTreeMap::from([(0u8, 4usize), (1u8, 4usize)]);
        let draw = srs_sample(&pop, &budgets, &Stream::root(seed)).unwrap();
        let s1 = estimate_subset(&pop, &draw, &opts).unwrap().estimate;
        let s2 = estimate_subset(&pop2, &draw, &opts).unwrap().estimate;
        prop_assert!((s2 - a * s1).abs() <= 1e-9 * (1.0 + s1.abs()));
        let m1 = estimate_ma_srs(&pop, &draw, &opts).unwrap().estimate;
        let m2 = estimate_ma_srs(&pop2, &draw, &opts).unwrap().estimate;
        prop_assert!((m2 - a * m1).abs() <= 1e-9 * (1.0 + m1.abs()));

        let alloc = Allocation::from_arm_quotas(
            &[(0, vec![2, 2]), (1, vec![2, 2])],
            AllocationMethod::Manual,
        );
        let sdraw = stratified_sample(&pop, &strata, &alloc, &Stream::root(seed)).unwrap();
        let t1 = estimate_ma_stratified(&pop, &strata, &sdraw, &alloc, &opts).unwrap().estimate;
        let t2 = estimate_ma_stratified(&pop2, &strata2, &sdraw, &alloc, &opts).unwrap().estimate;
        prop_assert!((t2 - a * t1).abs() <= 1e-9 * (1.0 + t1.abs()));
    }

    #[test]
    fn surrogate_shift_leaves_ma_estimators_unchanged(
        ys in prop::collection::vec(finite(-5.0..5.0), 16),
        yhats in prop::collection::vec(finite(-5.0..5.0), 16),
        shift in finite(-10.0..10.0),
        seed in 0u64..1000,
    ) {
        let (pop, strata) = build_pop(&ys, &yhats);
        let shifted: Vec<f64> = yhats.iter().map(|y| y + shift).collect();
        let (pop2, strata2) = build_pop(&ys, &shifted);
        let opts = EstimateOptions::default();

        let budgets = BTreeMap::from([(0u8, 4usize), (1u8, 4usize)]);
        let draw = srs_sample(&pop, &budgets, &Stream::root(seed)).unwrap();
        let m1 = estimate_ma_srs(&pop, &draw, &opts).unwrap().estimate;
        let m2 = estimate_ma_srs(&pop2, &draw, &opts).unwrap().estimate;
        prop_assert!((m1 - m2).abs() <= 1e-10 * (1.0 + m1.abs()));

        let alloc = Allocation::from_arm_quotas(
            &[(0, vec![2, 2]), (1, vec![2, 2])],
            AllocationMethod::Manual,
        );
        let sdraw = stratified_sample(&pop, &strata, &alloc, &Stream::root(seed)).unwrap();
        let t1 = estimate_ma_stratified(&pop, &strata, &sdraw, &alloc, &opts).unwrap().estimate;
        let t2 = estimate_ma_stratified(&pop2, &strata2, &sdraw, &alloc, &opts).unwrap().estimate;
        prop_assert!((t1 - t2).abs() <= 1e-10 * (1.0 + t1.abs()));
    }

    #[test]
    fn csv_round_trip_preserves_units(
        ys in prop::collection::vec(prop::option::of(finite(-100.0..100.0)), 12),
        yhats in prop::collection::vec(finite(-100.0..100.0), 12),
    ) {
        let units: Vec<UnitRecord> = (0..12)
            .map(|i| UnitRecord::new(format!("u{i:02}"), (i % 2) as u8, yhats[i], ys[i]))
            .collect();
        let pop = PopulationTable::new(units, Mode::TwoArm).unwrap();
        let mut buf = Vec::new();
        write_population_csv(&pop, None, &mut buf).unwrap();
        let map = ColumnMapping {
            arm: Some("arm".to_string()),
            ..ColumnMapping::default()
        };
        let reloaded = load_population(buf.as_slice(), &map).unwrap();
        prop_assert_eq!(reloaded.pop.len(), pop.len());
        for (a, b) in pop.units().iter().zip(reloaded.pop.units()) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.arm, b.arm);
            prop_assert_eq!(a.y_hat, b.y_hat);
            prop_assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn residuals_cover_exactly_the_selected_ids(
        n in 4usize..20,
        budget in 2usize..4,
        seed in 0u64..500,
    ) {
        let units: Vec<UnitRecord> = (0..n)
            .map(|i| UnitRecord::new(format!("u{i:02}"), 0, i as f64 * 0.5, Some(i as f64)))
            .collect();
        let pop = PopulationTable::new(units, Mode::SingleArm).unwrap();
        let budgets = BTreeMap::from([(0u8, budget.min(n))]);
        let draw = srs_sample(&pop, &budgets, &Stream::root(seed)).unwrap();
        let res = stratest_core::population::residuals(&pop, &draw).unwrap();
        let drawn: Vec<&String> = draw.selected().collect();
        prop_assert_eq!(res.len(), drawn.len());
        for id in drawn {
            prop_assert!(res.contains_key(id));
        }
    }
}

#[test]
fn subset_and_ma_estimators_unbiased_by_full_enumeration() {
    // N = 6 (3 per arm is impossible under a balanced CRD of 6 with equal
    // arms, so enumerate C(6,3) = 20 assignments), budgets (2, 2).
    use itertools::Itertools;
    use stratest_core::simulation::exhaustive::{
        exhaustive_oracle, median_split_rule, OracleEstimator, OracleOptions, TinyPopulation,
        TinyUnit,
    };
    let units = (0..6)
        .map(|i| {
            let base = (i as f64 * 1.7).sin() * 2.0;
            TinyUnit {
                id: format!("u{i}"),
                y0: base,
                y1: base + 0.5 + 0.2 * (i as f64).cos(),
                yhat0: base * 0.8 - 0.3,
                yhat1: base * 0.8 + 0.4,
            }
        })
        .collect::<Vec<_>>();
    let tiny = TinyPopulation::new(units);
    let report = exhaustive_oracle(
        &tiny,
        3,
        median_split_rule,
        |_pop, strata| {
            let quotas: Vec<(u8, Vec<usize>)> = [0u8, 1]
                .iter()
                .map(|&arm| (arm, vec![1; strata.k(arm)]))
                .collect();
            Ok(Allocation::from_arm_quotas(
                &quotas,
                AllocationMethod::Manual,
            ))
        },
        &OracleOptions::default(),
    )
    .unwrap();
    let ate = tiny.true_ate();
    for kind in [
        OracleEstimator::Subset,
        OracleEstimator::MaSrs,
        OracleEstimator::MaStratified,
    ] {
        assert!(
            (report.moments[&kind].mean - ate).abs() < 1e-12,
            "{kind:?} biased: {} vs {ate}",
            report.moments[&kind].mean
        );
    }
    // Sanity on the combination count: 20 assignments, each with 9 SRS
    // draws and 4 stratified draws.
    let expected: u64 = (0..6).combinations(3).count() as u64 * (9 + 4);
    assert_eq!(report.enumerated, expected);
}

#[test]
fn draw_determinism_under_id_reordering() {
    // The Fisher-Yates pass runs over ids sorted lexicographically, so the
    // input row order must not matter.
    let units_a: Vec<UnitRecord> = (0..10)
        .map(|i| UnitRecord::new(format!("u{i}"), 0, i as f64, None))
        .collect();
    let mut units_b = units_a.clone();
    units_b.reverse();
    let pop_a = PopulationTable::new(units_a, Mode::SingleArm).unwrap();
    let pop_b = PopulationTable::new(units_b, Mode::SingleArm).unwrap();
    let budgets = BTreeMap::from([(0u8, 4usize)]);
    let a = srs_sample(&pop_a, &budgets, &Stream::root(3)).unwrap();
    let b = srs_sample(&pop_b, &budgets, &Stream::root(3)).unwrap();
    let ids_a: Vec<&String> = a.selected().collect();
    let ids_b: Vec<&String> = b.selected().collect();
    assert_eq!(ids_a, ids_b);
}

#[test]
fn ma_stratified_se_matches_plugin_total() {
    let (pop, strata) = build_pop(
        &[1.0, 2.0, 0.5, 3.0, 2.2, 1.8, 0.9, 2.6, 1.4, 2.0, 3.1, 0.2],
        &[0.8, 2.2, 0.7, 2.4, 2.0, 1.5, 1.2, 2.2, 1.0, 2.4, 2.8, 0.5],
    );
    let alloc = Allocation::from_arm_quotas(
        &[(0, vec![2, 2]), (1, vec![2, 2])],
        AllocationMethod::Manual,
    );
    let draw = stratified_sample(&pop, &strata, &alloc, &Stream::root(11)).unwrap();
    let opts = EstimateOptions::default();
    let report = estimate_ma_stratified(&pop, &strata, &draw, &alloc, &opts).unwrap();
    let plugin = stratest_core::plugin_variance(&pop, &strata, &draw, opts.variance_mode).unwrap();
    assert!((report.se.unwrap().powi(2) - plugin.total).abs() < 1e-12);
    let from_components: f64 = report.components.values().sum();
    assert!((from_components - plugin.total).abs() < 1e-12);
}

#[test]
fn draws_that_skip_uncoded_units_error_cleanly() {
    let mut units: Vec<UnitRecord> = (0..8)
        .map(|i| UnitRecord::new(format!("u{i}"), (i % 2) as u8, i as f64, Some(i as f64)))
        .collect();
    units[3].y = None;
    let pop = PopulationTable::new(units, Mode::TwoArm).unwrap();
    let ids = ["u2".to_string(), "u3".to_string()];
    let draw = SampleDraw::from_ids(&pop, ids.into_iter());
    let err = estimate_subset(&pop, &draw, &EstimateOptions::default()).unwrap_err();
    assert!(matches!(err, stratest_core::Error::UncodedUnit(id) if id == "u3"));
}
