mod common;

use cfx_core::engine::{
    clean_segments, explain, CounterfactualResult, ExplainOptions, Mask, SparsifyConfig,
    VariantKind,
};
use cfx_core::metrics::{lp_sparsity, validity_multi};
use cfx_core::proto::{mine_prototypes, MiningConfig};
use cfx_core::CfxError;
use proptest::prelude::*;

#[test]
fn counterfactuals_on_the_fixture() {
    let (data, model) = common::fixture(20, 21);
    let db = mine_prototypes(&data, &model, &MiningConfig::default()).unwrap();
    let queries = common::queries(5, 77);
    let options = ExplainOptions::default();
    let dir = tempfile::tempdir().unwrap();

    for q in &queries.records {
        let r = explain(q, &model, &db, &options).unwrap();
        let target = r.target_labels();
        assert!(!r.initial_labels.is_set(r.target_class));
        assert_eq!(r.variants[0].kind, VariantKind::Original);
        assert_eq!(r.variants[1].kind, VariantKind::Sparse);

        let original = r.variant(VariantKind::Original).unwrap();
        let sparse = r.variant(VariantKind::Sparse).unwrap();
        assert!(validity_multi(&model, &original.series, &target).unwrap());
        assert!(validity_multi(&model, &sparse.series, &target).unwrap());
        let l0 = |s| lp_sparsity(q, s).unwrap().l0;
        assert!(l0(&sparse.series) <= l0(&original.series));

        for v in &r.variants {
            assert_eq!(v.series.record_id(), q.record_id());
            assert_eq!(
                clean_segments(&v.mask, options.sparsify.min_segment_len),
                v.mask
            );
            for (i, (&cf, &x)) in v.series.values().iter().zip(q.values()).enumerate() {
                if !v.mask.bits()[i] {
                    assert_eq!(cf, x, "{}: unmasked sample {i} changed", v.kind);
                }
            }
        }
        match (&r.alignment, &r.alignment_error) {
            (Some(_), None) => assert!(r.variant(VariantKind::AlignedSparse).is_some()),
            (None, Some(_)) => assert!(r.variant(VariantKind::AlignedSparse).is_none()),
            other => panic!("inconsistent alignment state {other:?}"),
        }

        let out = dir.path().join(q.record_id());
        std::fs::create_dir_all(&out).unwrap();
        r.save(&out).unwrap();
        assert_eq!(CounterfactualResult::load(&out).unwrap(), r);
    }
}

#[test]
fn explicit_targets() {
    let (data, model) = common::fixture(12, 4);
    let db = mine_prototypes(&data, &model, &MiningConfig::default()).unwrap();
    let q = &common::queries(1, 9).records[0];
    let current = model.predict_labels(q).unwrap().positives()[0];
    let r = explain(
        q,
        &model,
        &db,
        &ExplainOptions {
            target: Some(current),
            ..Default::default()
        },
    );
    assert!(matches!(r, Err(CfxError::TargetIsCurrent(_))));
    let other = (current + 1) % 3;
    let r = explain(
        q,
        &model,
        &db,
        &ExplainOptions {
            target: Some(other),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(r.target_class, other);
    assert!(!r.target_auto);
}

#[test]
fn exhausted_schedule_keeps_the_full_donor() {
    let (data, model) = common::fixture(12, 4);
    let db = mine_prototypes(&data, &model, &MiningConfig::default()).unwrap();
    let q = &common::queries(1, 10).records[0];
    let options = ExplainOptions {
        sparsify: SparsifyConfig {
            initial_keep_ratio: 0.01,
            keep_ratio_step: 0.01,
            max_keep_ratio: 0.02,
            ..SparsifyConfig::default()
        },
        ..Default::default()
    };
    let r = explain(q, &model, &db, &options).unwrap();
    let sparse = r.variant(VariantKind::Sparse).unwrap();
    if !sparse.valid {
        assert_eq!(sparse.mask, Mask::ones(500, 4));
        assert_eq!(sparse.series.values(), r.variants[0].series.values());
    }
}

proptest! {
    #[test]
    fn segment_cleaning_is_idempotent(bits in prop::collection::vec(any::<bool>(), 60), min_len in 1usize..15) {
        let m = Mask::from_bits(30, 2, bits).unwrap();
        let once = clean_segments(&m, min_len);
        prop_assert_eq!(clean_segments(&once, min_len), once.clone());
        prop_assert!(once.count() <= m.count());
        for run in once.runs().iter().flatten() {
            prop_assert!(run[1] >= min_len);
        }
    }
}
