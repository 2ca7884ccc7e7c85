//! Metric MDS by stress majorization (SMACOF with unit weights).
//!
//! The start configuration is the classical (Torgerson) solution; columns
//! whose eigenvalue is not positive are filled with small seeded noise so the
//! Guttman transform can move them.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dtw::DistanceMatrix;
use crate::error::{CfxError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MdsInit {
    Classical,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdsConfig {
    pub max_iter: usize,
    /// Stop once `(old - new) / old` drops below this.
    pub rel_tol: f64,
    pub init: MdsInit,
    pub seed: u64,
}

impl Default for MdsConfig {
    fn default() -> Self {
        MdsConfig {
            max_iter: 300,
            rel_tol: 1e-6,
            init: MdsInit::Classical,
            seed: 0,
        }
    }
}

/// Points in embedding space, row-major `n x dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    n: usize,
    dims: usize,
    z: Vec<f64>,
    /// Raw stress `sum_{i<j} (|z_i - z_j| - D_ij)^2` after each iteration,
    /// starting with the initial configuration.
    pub stress_history: Vec<f64>,
}

impl Embedding {
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Embedding> {
        let n = points.len();
        let dims = points.first().map_or(0, Vec::len);
        if dims == 0 || points.iter().any(|p| p.len() != dims) {
            return Err(CfxError::Shape {
                expected: "non-empty points of equal dimension".into(),
                got: format!("{n} points"),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CfxError::NonFinite("embedding".into()));
        }
        Ok(Embedding {
            n,
            dims,
            z: points.into_iter().flatten().collect(),
            stress_history: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.z[i * self.dims..(i + 1) * self.dims]
    }

    pub fn stress(&self) -> f64 {
        self.stress_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclid(self.point(i), self.point(j))
    }

    /// Dense `n x n` Euclidean distance table.
    pub fn pairwise(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = self.distance(i, j);
                out[i * n + j] = d;
                out[j * n + i] = d;
            }
        }
        out
    }
}

#[inline]
pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn raw_stress(z: &[f64], n: usize, dims: usize, d: &DistanceMatrix) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let e =
                euclid(&z[i * dims..(i + 1) * dims], &z[j * dims..(j + 1) * dims]) - d.get(i, j);
            s += e * e;
        }
    }
    s
}

fn classical_start(d: &DistanceMatrix, dims: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = d.len();
    let sq = DMatrix::from_fn(n, n, |i, j| d.get(i, j) * d.get(i, j));
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand)
    });
    let eig = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .total_cmp(&eig.eigenvalues[x])
            .then(x.cmp(&y))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let jitter = 1e-3 * mean_distance(d).max(f64::MIN_POSITIVE);

    let mut z = vec![0.0; n * dims];
    for k in 0..dims {
        let lambda = order.get(k).map_or(0.0, |&o| eig.eigenvalues[o]);
        if lambda > 1e-12 * top && lambda > 0.0 {
            let v = eig.eigenvectors.column(order[k]);
            // fix the eigenvector sign so the output is reproducible
            let pivot = (0..n)
                .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
                .unwrap_or(0);
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            let scale = lambda.sqrt() * sign;
            for i in 0..n {
                z[i * dims + k] = v[i] * scale;
            }
        } else {
            for i in 0..n {
                z[i * dims + k] = rng.random_range(-jitter..jitter);
            }
        }
    }
    z
}

fn mean_distance(d: &DistanceMatrix) -> f64 {
    let n = d.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += d.get(i, j);
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// One Guttman transform `X <- (1/n) B(X) X`.
fn guttman(z: &[f64], n: usize, dims: usize, d: &DistanceMatrix) -> Vec<f64> {
    let mut out = vec![0.0; n * dims];
    for i in 0..n {
        let zi = &z[i * dims..(i + 1) * dims];
        let mut diag = 0.0;
        let acc = &mut out[i * dims..(i + 1) * dims];
        for j in 0..n {
            if j == i {
                continue;
            }
            let zj = &z[j * dims..(j + 1) * dims];
            let dist = euclid(zi, zj);
            let bij = if dist > 0.0 { -d.get(i, j) / dist } else { 0.0 };
            diag -= bij;
            for k in 0..dims {
                acc[k] += bij * zj[k];
            }
        }
        for k in 0..dims {
            acc[k] = (acc[k] + diag * zi[k]) / n as f64;
        }
    }
    out
}

pub fn mds_embed(matrix: &DistanceMatrix, dims: usize, config: &MdsConfig) -> Result<Embedding> {
    if dims == 0 {
        return Err(CfxError::InvalidArgument("MDS needs dims >= 1".into()));
    }
    let n = matrix.len();
    if n == 0 {
        return Err(CfxError::Empty("distance matrix"));
    }
    // re-validate: matrices built by hand bypass `distance_matrix`
    DistanceMatrix::from_rows(matrix.rows(), matrix.ids().to_vec())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut z = match config.init {
        MdsInit::Classical => classical_start(matrix, dims, &mut rng),
        MdsInit::Random => {
            let spread = mean_distance(matrix).max(1.0);
            (0..n * dims)
                .map(|_| rng.random_range(-spread..spread))
                .collect()
        }
    };

    let total: f64 = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| matrix.get(i, j).powi(2))
        .sum();
    let floor = total * f64::EPSILON * f64::EPSILON;

    let mut stress = raw_stress(&z, n, dims, matrix);
    let mut history = vec![stress];
    for _ in 0..config.max_iter {
        if stress <= floor {
            break;
        }
        let next = guttman(&z, n, dims, matrix);
        let next_stress = raw_stress(&next, n, dims, matrix);
        if next_stress > stress {
            // rounding noise near a fixed point; keep the better configuration
            break;
        }
        let rel = (stress - next_stress) / stress;
        z = next;
        stress = next_stress;
        history.push(stress);
        if rel < config.rel_tol {
            break;
        }
    }

    Ok(Embedding {
        n,
        dims,
        z,
        stress_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_from_points(points: &[Vec<f64>]) -> DistanceMatrix {
        let rows = points
            .iter()
            .map(|p| points.iter().map(|q| euclid(p, q)).collect())
            .collect();
        let ids = (0..points.len()).map(|i| format!("p{i}")).collect();
        DistanceMatrix::from_rows(rows, ids).unwrap()
    }

    #[test]
    fn equilateral_triangle_embeds_exactly() {
        let rows = vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ];
        let d = DistanceMatrix::from_rows(rows, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let e = mds_embed(&d, 2, &MdsConfig::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((e.distance(i, j) - 1.0).abs() < 1e-4);
                }
            }
        }
        assert!(e.stress() <= 1e-6);
    }

    #[test]
    fn random_planar_points_embed_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let e = mds_embed(&matrix_from_points(&pts), 2, &MdsConfig::default()).unwrap();
        assert!(e.stress() <= 1e-6, "stress {}", e.stress());
    }

    #[test]
    fn square_in_one_dimension_has_residual_stress() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        ];
        let e = mds_embed(&matrix_from_points(&pts), 1, &MdsConfig::default()).unwrap();
        assert!(e.stress() > 1e-3);
    }

    #[test]
    fn stress_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // noisy, non-Euclidean dissimilarities
        let n = 15;
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random_range(0.5..3.0);
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        let d = DistanceMatrix::from_rows(rows, (0..n).map(|i| i.to_string()).collect()).unwrap();
        for init in [MdsInit::Classical, MdsInit::Random] {
            let e = mds_embed(
                &d,
                2,
                &MdsConfig {
                    init,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(e.stress_history.len() > 1);
            for w in e.stress_history.windows(2) {
                assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let d = matrix_from_points(&[vec![0.0], vec![1.0]]);
        assert!(mds_embed(&d, 0, &MdsConfig::default()).is_err());
    }

    #[test]
    fn deterministic() {
        let pts: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![i as f64, (i * i) as f64 % 5.0])
            .collect();
        let d = matrix_from_points(&pts);
        let a = mds_embed(&d, 3, &MdsConfig::default()).unwrap();
        let b = mds_embed(&d, 3, &MdsConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
