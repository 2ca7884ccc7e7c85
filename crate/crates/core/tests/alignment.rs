use cfx_core::engine::{align_prototype, detect_rpeaks, PeakConfig};
use cfx_core::synth::{beat_train, SynthConfig};

#[test]
fn aligned_peaks_coincide_with_query_peaks() {
    let cfg = SynthConfig {
        bpm: (50.0, 110.0),
        ..SynthConfig::default()
    };
    let peaks = PeakConfig::default();
    let mut matched = 0;
    for i in 0..100u64 {
        let (query, _) = beat_train("q", i % 3 == 1, i % 3 == 2, &cfg, 1000 + i).unwrap();
        let (proto, _) = beat_train("p", i % 2 == 1, false, &cfg, 5000 + i).unwrap();
        let a = align_prototype(&proto, &query, &peaks).unwrap();
        let found = detect_rpeaks(&a.series, a.info.query_lead, &peaks);
        for &(q, _) in &a.info.matched {
            assert!(
                found.indices().contains(&q),
                "pair {i}: beat {q} missing from {:?}",
                found.indices()
            );
            matched += 1;
        }
    }
    assert!(matched > 300);
}

#[test]
fn aligning_a_query_to_itself_is_exact() {
    let cfg = SynthConfig::default();
    for seed in 0..10 {
        let (q, _) = beat_train("q", seed % 2 == 0, false, &cfg, seed).unwrap();
        let a = align_prototype(&q, &q, &PeakConfig::default()).unwrap();
        assert_eq!(a.series.values(), q.values());
        assert_eq!(a.info.padded + a.info.trimmed + a.info.dropped, 0);
    }
}
