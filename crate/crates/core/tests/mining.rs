mod common;

use cfx_core::proto::{
    filter_samples, mds_embed, medoid, medoid_index, mine_prototypes, DistanceMatrix, MdsConfig,
    MiningConfig, PrototypeDB,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> DistanceMatrix {
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0..4) as f64;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    DistanceMatrix::from_rows(d, (0..n).map(|i| format!("r{i}")).collect()).unwrap()
}

#[test]
fn medoid_matches_exhaustive_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let m = random_matrix(n, &mut rng);
        let members: Vec<usize> = (0..n).collect();
        // small integer distances make ties common
        let sums: Vec<f64> = members
            .iter()
            .map(|&i| members.iter().map(|&j| m.get(i, j)).sum())
            .collect();
        let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
        let expected = sums.iter().position(|&s| s == min).unwrap();
        assert_eq!(medoid_index(&members, &m).unwrap(), expected);
        let ids: Vec<&str> = m.ids().iter().map(String::as_str).collect();
        assert_eq!(medoid(&ids, &m).unwrap(), format!("r{expected}"));
    }
}

#[test]
fn mds_recovers_euclidean_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let dims = rng.random_range(2..=5);
        let n = rng.random_range(dims + 2..=30);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dims).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let dist = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let rows: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| dist(a, b)).collect())
            .collect();
        let m = DistanceMatrix::from_rows(rows.clone(), (0..n).map(|i| i.to_string()).collect())
            .unwrap();
        let e = mds_embed(&m, dims, &MdsConfig::default()).unwrap();
        assert!(e.stress() <= 1e-6, "trial {trial}: stress {}", e.stress());
        for i in 0..n {
            for j in i + 1..n {
                let rel = (e.distance(i, j) - rows[i][j]).abs() / rows[i][j];
                assert!(rel <= 1e-4, "trial {trial}: ({i},{j}) off by {rel}");
            }
        }
    }
}

#[test]
fn mining_is_deterministic_and_keeps_real_records() {
    let (data, model) = common::fixture(20, 5);
    let cfg = MiningConfig::default();
    let db = mine_prototypes(&data, &model, &cfg).unwrap();
    assert_eq!(db, mine_prototypes(&data, &model, &cfg).unwrap());

    let pools = filter_samples(&data, &model).unwrap();
    for entry in &db.entries {
        let i = data.find_record(&entry.record_id).unwrap();
        assert_eq!(data.records[i], entry.series);
        assert!(pools[entry.class_index].contains(&i));
        assert!(entry.cluster_size >= 1);
    }
    for (c, summary) in db.classes.iter().enumerate() {
        assert_eq!(summary.n_candidates, pools[c].len());
        assert_eq!(summary.n_prototypes, db.for_class(c).count());
        let sizes: usize = db.for_class(c).map(|e| e.cluster_size).sum();
        assert_eq!(sizes, pools[c].len());
    }

    let dir = tempfile::tempdir().unwrap();
    db.save(dir.path()).unwrap();
    let loaded = PrototypeDB::load(dir.path()).unwrap();
    assert_eq!(loaded, db);
    let first = std::fs::read(dir.path().join("prototypes.json")).unwrap();
    loaded.save(dir.path()).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("prototypes.json")).unwrap(),
        first
    );
}

#[test]
fn filtering_keeps_only_correct_single_label_records() {
    let (data, model) = common::fixture(10, 8);
    let pools = filter_samples(&data, &model).unwrap();
    for (c, pool) in pools.iter().enumerate() {
        for &i in pool {
            assert_eq!(data.labels[i].single_class(), Some(c));
            assert_eq!(
                model.predict_labels(&data.records[i]).unwrap(),
                data.labels[i]
            );
        }
    }
}
