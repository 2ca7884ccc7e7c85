mod common;

use cfx_core::data::Series;
use cfx_core::engine::{explain, ExplainOptions};
use cfx_core::metrics::{
    aggregate_report, evaluate_result, lp_sparsity, metrics_csv, sparsity_ratio,
    temporal_stability, EvalConfig, GroupKey, ShiftSet,
};
use cfx_core::proto::{mine_prototypes, MiningConfig};
use proptest::prelude::*;

fn pair(n: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (
        prop::collection::vec(-100.0f32..100.0, n),
        prop::collection::vec(-100.0f32..100.0, n),
    )
}

proptest! {
    #[test]
    fn l2_never_exceeds_l1((a, b) in pair(24)) {
        let x = Series::new("x", 12, 2, a).unwrap();
        let y = Series::new("y", 12, 2, b).unwrap();
        let lp = lp_sparsity(&x, &y).unwrap();
        prop_assert!(lp.l2 <= lp.l1 + 1e-12 * lp.l1.max(1.0));
        prop_assert!((0.0..=1.0).contains(&lp.l0));
        let s = sparsity_ratio(&x, &y, 1.0).unwrap();
        prop_assert!(s <= lp.l0);
    }

    #[test]
    fn identical_series_have_zero_distance(a in prop::collection::vec(-10.0f32..10.0, 20)) {
        let x = Series::new("x", 10, 2, a).unwrap();
        let lp = lp_sparsity(&x, &x).unwrap();
        prop_assert_eq!((lp.l0, lp.l1, lp.l2), (0.0, 0.0, 0.0));
        prop_assert_eq!(sparsity_ratio(&x, &x, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_series_are_shift_stable(v in -50.0f32..50.0, t in 3usize..40, c in 1usize..4) {
        let x = Series::from_fn("x", t, c, |_, _| v).unwrap();
        prop_assert_eq!(temporal_stability(&x, &ShiftSet::default(), None).unwrap(), 1.0);
    }
}

#[test]
fn evaluation_is_reproducible_and_order_free() {
    let (data, model) = common::fixture(12, 31);
    let db = mine_prototypes(&data, &model, &MiningConfig::default()).unwrap();
    let queries = common::queries(2, 32);
    let config = EvalConfig::default();
    let mut entries = Vec::new();
    for q in &queries.records {
        let r = explain(q, &model, &db, &ExplainOptions::default()).unwrap();
        let e = evaluate_result(&r, q, &model, &config).unwrap();
        assert_eq!(e, evaluate_result(&r, q, &model, &config).unwrap());
        for m in &e {
            assert!(m.l2 <= m.l1);
            assert!((0.0..=1.0).contains(&m.noise_stability));
            assert!(m.temporal_stability > 0.0 && m.temporal_stability <= 1.0);
        }
        entries.extend(e);
    }
    let keys = [
        GroupKey::InitialClass,
        GroupKey::TargetClass,
        GroupKey::Variant,
    ];
    let forward = aggregate_report(&entries, &keys).unwrap();
    entries.reverse();
    assert_eq!(aggregate_report(&entries, &keys).unwrap(), forward);
    let n: usize = forward.iter().map(|r| r.n).sum();
    assert_eq!(n, entries.len());
    assert!(String::from_utf8(metrics_csv(&entries).unwrap())
        .unwrap()
        .starts_with("query_id,"));
}
