use cfx_core::proto::{distance_matrix, dtw, dtw_distance, Band};
use cfx_core::synth::{generate, SynthConfig};
use proptest::prelude::*;

fn cost(a: &[f32], b: &[f32], c: usize, i: usize, j: usize) -> f64 {
    (0..c)
        .map(|k| (f64::from(a[i * c + k]) - f64::from(b[j * c + k])).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Minimum over every monotone warping path, enumerated recursively.
fn brute_force(a: &[f32], b: &[f32], c: usize, band: Option<usize>) -> f64 {
    let (n, m) = (a.len() / c, b.len() / c);
    fn walk(
        i: usize,
        j: usize,
        n: usize,
        m: usize,
        band: Option<usize>,
        step: &dyn Fn(usize, usize) -> f64,
    ) -> f64 {
        if band.is_some_and(|w| i.abs_diff(j) > w) {
            return f64::INFINITY;
        }
        let here = step(i, j);
        if i + 1 == n && j + 1 == m {
            return here;
        }
        let mut best = f64::INFINITY;
        if i + 1 < n {
            best = best.min(walk(i + 1, j, n, m, band, step));
        }
        if j + 1 < m {
            best = best.min(walk(i, j + 1, n, m, band, step));
        }
        if i + 1 < n && j + 1 < m {
            best = best.min(walk(i + 1, j + 1, n, m, band, step));
        }
        here + best
    }
    walk(0, 0, n, m, band, &|i, j| cost(a, b, c, i, j))
}

fn pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>, usize)> {
    (1usize..=2, 1usize..=6, 1usize..=6).prop_flat_map(|(c, n, m)| {
        (
            prop::collection::vec(-5.0f32..5.0, n * c),
            prop::collection::vec(-5.0f32..5.0, m * c),
            Just(c),
        )
    })
}

proptest! {
    #[test]
    fn dp_matches_path_enumeration((a, b, c) in pair()) {
        let dp = dtw(&a, &b, c, None).unwrap();
        prop_assert!((dp - brute_force(&a, &b, c, None)).abs() <= 1e-9);
    }

    #[test]
    fn banded_dp_matches_banded_enumeration((a, b, c) in pair(), w in 0usize..4) {
        let (n, m) = (a.len() / c, b.len() / c);
        prop_assume!(w >= n.abs_diff(m));
        let dp = dtw(&a, &b, c, Some(w)).unwrap();
        prop_assert!((dp - brute_force(&a, &b, c, Some(w))).abs() <= 1e-9);
    }

    #[test]
    fn symmetric_and_zero_on_self((a, b, c) in pair()) {
        prop_assert_eq!(dtw(&a, &a, c, None).unwrap(), 0.0);
        prop_assert!((dtw(&a, &b, c, None).unwrap() - dtw(&b, &a, c, None).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn wider_bands_never_increase_the_distance() {
    let data = generate(&SynthConfig {
        n_per_class: 2,
        n_timesteps: 120,
        ..SynthConfig::default()
    })
    .unwrap();
    let (a, b) = (&data.records[0], &data.records[4]);
    let mut last = f64::INFINITY;
    for w in [0, 2, 5, 12, 30, 119] {
        let d = dtw_distance(a, b, Some(w)).unwrap();
        assert!(d <= last + 1e-9, "band {w}: {d} > {last}");
        last = d;
    }
    assert!((dtw_distance(a, b, None).unwrap() - last).abs() <= 1e-9);
}

#[test]
fn distance_matrix_is_symmetric_with_zero_diagonal() {
    let data = generate(&SynthConfig {
        n_per_class: 3,
        n_timesteps: 80,
        ..SynthConfig::default()
    })
    .unwrap();
    let m = distance_matrix(&data.records, Band::Auto.resolve(80)).unwrap();
    for i in 0..m.len() {
        assert_eq!(m.get(i, i), 0.0);
        for j in 0..m.len() {
            assert_eq!(m.get(i, j), m.get(j, i));
        }
    }
}
