//! k-means in embedding space, silhouette scoring, structure selection and
//! medoid extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dtw::DistanceMatrix;
use super::mds::{mds_embed, Embedding, MdsConfig};
use crate::error::{CfxError, Result};
use crate::mix_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster of each point, in `0..k`. Clusters are numbered by their
    /// lowest member index.
    pub labels: Vec<usize>,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == cluster).then_some(i))
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 20,
            max_iter: 300,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(points: &Embedding, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points.point(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.point(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points.point(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.point(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(
    points: &Embedding,
    mut centers: Vec<Vec<f64>>,
    max_iter: usize,
) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let (n, dims, k) = (points.len(), points.dims(), centers.len());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest_center(points.point(i), &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        repair_empty(points, &mut labels, &centers, k);
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(points.point(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            for s in &mut sums[c] {
                *s /= counts[c] as f64;
            }
        }
        centers = sums;
        if !changed {
            break;
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(points.point(i), &centers[labels[i]]))
        .sum();
    (labels, centers, inertia)
}

/// Moves the worst-fitting point of a multi-member cluster into each empty
/// cluster.
fn repair_empty(points: &Embedding, labels: &mut [usize], centers: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(points.point(a), &centers[labels[a]]);
                let db = sq_dist(points.point(b), &centers[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("n >= k guarantees a multi-member cluster");
        labels[donor] = empty;
    }
}

/// Renumbers clusters by first appearance so equal partitions compare equal.
fn canonicalize(labels: &[usize], centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut map = vec![usize::MAX; centers.len()];
    let mut next = 0;
    for &l in labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    let mut new_centers = vec![Vec::new(); centers.len()];
    for (old, c) in centers.into_iter().enumerate() {
        new_centers[map[old]] = c;
    }
    (labels.iter().map(|&l| map[l]).collect(), new_centers)
}

/// Seeded k-means++ / Lloyd with restarts; keeps the lowest inertia.
pub fn kmeans(points: &Embedding, k: usize, config: &KMeansConfig) -> Result<ClusterAssignment> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(CfxError::InvalidArgument(format!(
            "k = {k} is not in 1..={n}"
        )));
    }
    let mut best: Option<ClusterAssignment> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[k as u64, restart as u64]));
        let init = plus_plus_init(points, k, &mut rng);
        let (labels, centers, inertia) = lloyd(points, init, config.max_iter);
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            let (labels, centroids) = canonicalize(&labels, centers);
            best = Some(ClusterAssignment {
                labels,
                k,
                centroids,
                inertia,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean silhouette over a precomputed `n x n` distance table.
pub fn silhouette_from_distances(dist: &[f64], labels: &[usize], k: usize) -> Result<f64> {
    let n = labels.len();
    if k < 2 {
        return Err(CfxError::InvalidArgument("silhouette needs k >= 2".into()));
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.contains(&0) {
        return Err(CfxError::InvalidArgument(
            "silhouette needs non-empty clusters".into(),
        ));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist[i * n + j];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Mean of `(b(i) - a(i)) / max(a(i), b(i))` with Euclidean distances;
/// singleton clusters and zero-distance points score 0.
pub fn silhouette(embedding: &Embedding, assignment: &ClusterAssignment) -> Result<f64> {
    if assignment.labels.len() != embedding.len() {
        return Err(CfxError::Shape {
            expected: format!("{} labels", embedding.len()),
            got: format!("{} labels", assignment.labels.len()),
        });
    }
    silhouette_from_distances(&embedding.pairwise(), &assignment.labels, assignment.k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureConfig {
    pub dims: Vec<usize>,
    pub k: Vec<usize>,
    pub mds: MdsConfig,
    pub kmeans: KMeansConfig,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            dims: (2..=8).collect(),
            k: (2..=10).collect(),
            mds: MdsConfig::default(),
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub dims: usize,
    pub k: usize,
    pub silhouette: f64,
    pub embedding: Embedding,
    pub assignment: ClusterAssignment,
    /// Every `(dims, k, silhouette)` evaluated, in sweep order.
    pub scores: Vec<(usize, usize, f64)>,
    /// Set when candidate k values were dropped because `k >= n`.
    pub k_truncated: bool,
}

/// Embeds at every candidate dimension, clusters at every candidate `k` and
/// keeps the pair with the highest silhouette (ties: smaller dims, then
/// smaller k).
pub fn select_structure(matrix: &DistanceMatrix, config: &StructureConfig) -> Result<Structure> {
    let n = matrix.len();
    if n < 3 {
        return Err(CfxError::InvalidArgument(format!(
            "structure selection needs at least 3 points, got {n}"
        )));
    }
    let mut ks: Vec<usize> = config.k.iter().copied().filter(|&k| k >= 2).collect();
    ks.sort_unstable();
    ks.dedup();
    let before = ks.len();
    ks.retain(|&k| k < n);
    let k_truncated = ks.len() < before;
    if k_truncated {
        log::warn!("k range truncated to at most {} for {n} points", n - 1);
    }
    let mut dims: Vec<usize> = config.dims.iter().copied().filter(|&d| d >= 1).collect();
    dims.sort_unstable();
    dims.dedup();
    if ks.is_empty() || dims.is_empty() {
        return Err(CfxError::InvalidArgument("empty dims or k range".into()));
    }

    let mut best: Option<Structure> = None;
    let mut scores = Vec::new();
    for &d in &dims {
        let mds_cfg = MdsConfig {
            seed: mix_seed(config.mds.seed, &[d as u64]),
            ..config.mds.clone()
        };
        let embedding = mds_embed(matrix, d, &mds_cfg)?;
        let table = embedding.pairwise();
        for &k in &ks {
            let km_cfg = KMeansConfig {
                seed: mix_seed(config.kmeans.seed, &[d as u64]),
                ..config.kmeans.clone()
            };
            let assignment = kmeans(&embedding, k, &km_cfg)?;
            let s = silhouette_from_distances(&table, &assignment.labels, k)?;
            scores.push((d, k, s));
            if best.as_ref().is_none_or(|b| s > b.silhouette) {
                best = Some(Structure {
                    dims: d,
                    k,
                    silhouette: s,
                    embedding: embedding.clone(),
                    assignment,
                    scores: Vec::new(),
                    k_truncated,
                });
            }
        }
    }
    let mut best = best.expect("non-empty sweep");
    best.scores = scores;
    Ok(best)
}

/// Member (by matrix index) minimizing the summed distance to all members;
/// ties go to the lowest index.
pub fn medoid_index(members: &[usize], matrix: &DistanceMatrix) -> Result<usize> {
    if members.is_empty() {
        return Err(CfxError::Empty("cluster"));
    }
    if let Some(bad) = members.iter().find(|&&m| m >= matrix.len()) {
        return Err(CfxError::InvalidArgument(format!(
            "index {bad} not in matrix"
        )));
    }
    let mut best = (usize::MAX, f64::INFINITY);
    for &candidate in members {
        let sum: f64 = members.iter().map(|&m| matrix.get(candidate, m)).sum();
        if sum < best.1 || (sum == best.1 && candidate < best.0) {
            best = (candidate, sum);
        }
    }
    Ok(best.0)
}

/// [`medoid_index`] keyed by record id.
pub fn medoid(cluster_record_ids: &[&str], matrix: &DistanceMatrix) -> Result<String> {
    let members = cluster_record_ids
        .iter()
        .map(|id| {
            matrix
                .index_of(id)
                .ok_or_else(|| CfxError::InvalidArgument(format!("record '{id}' not in matrix")))
        })
        .collect::<Result<Vec<_>>>()?;
    let idx = medoid_index(&members, matrix)?;
    Ok(matrix.ids()[idx].clone())
}

/// Mean distance from `center` to the other members (0 for singletons).
pub fn mean_distance_to(center: usize, members: &[usize], matrix: &DistanceMatrix) -> f64 {
    let others: Vec<f64> = members
        .iter()
        .filter(|&&m| m != center)
        .map(|&m| matrix.get(center, m))
        .collect();
    if others.is_empty() {
        0.0
    } else {
        others.iter().sum::<f64>() / others.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::mds::euclid;

    fn line(points: &[f64]) -> Embedding {
        Embedding::from_points(points.iter().map(|&p| vec![p]).collect()).unwrap()
    }

    fn assign(labels: Vec<usize>, k: usize) -> ClusterAssignment {
        ClusterAssignment {
            labels,
            k,
            centroids: vec![],
            inertia: 0.0,
        }
    }

    fn matrix_1d(points: &[f64]) -> DistanceMatrix {
        let rows = points
            .iter()
            .map(|a| points.iter().map(|b| (a - b).abs()).collect())
            .collect();
        DistanceMatrix::from_rows(rows, (0..points.len()).map(|i| format!("r{i}")).collect())
            .unwrap()
    }

    #[test]
    fn silhouette_examples() {
        let e = line(&[0.0, 0.0, 10.0, 10.0]);
        assert_eq!(silhouette(&e, &assign(vec![0, 0, 1, 1], 2)).unwrap(), 1.0);

        let same = line(&[3.0, 3.0, 3.0, 3.0]);
        assert_eq!(
            silhouette(&same, &assign(vec![0, 1, 1, 0], 2)).unwrap(),
            0.0
        );
        assert_eq!(
            silhouette(&same, &assign(vec![0, 1, 1, 1], 2)).unwrap(),
            0.0
        );

        // a = 1, b = 9.5 for the outer points; a = 1, b = 8.5 for the inner
        let e = line(&[0.0, 1.0, 9.0, 10.0]);
        let s = silhouette(&e, &assign(vec![0, 0, 1, 1], 2)).unwrap();
        let expected = (8.5 / 9.5 + 7.5 / 8.5) / 2.0;
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
        assert!(silhouette(&e, &assign(vec![0, 0, 0, 0], 1)).is_err());
    }

    #[test]
    fn kmeans_finds_separated_groups_and_is_seeded() {
        let e = line(&[0.0, 0.1, 0.2, 5.0, 5.1, 9.0, 9.2]);
        let a = kmeans(&e, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 1, 1, 2, 2]);
        assert_eq!(a.sizes(), vec![3, 2, 2]);
        assert_eq!(kmeans(&e, 3, &KMeansConfig::default()).unwrap(), a);
        assert!(kmeans(&e, 8, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn kmeans_never_leaves_empty_clusters() {
        let e = line(&[1.0; 6]);
        let a = kmeans(&e, 4, &KMeansConfig::default()).unwrap();
        assert!(a.sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn medoid_examples() {
        let m = matrix_1d(&[0.0, 1.0, 5.0]);
        assert_eq!(medoid(&["r1"], &m).unwrap(), "r1");
        assert_eq!(medoid(&["r0", "r1", "r2"], &m).unwrap(), "r1");
        assert_eq!(medoid(&["r2", "r0"], &m).unwrap(), "r0");
        assert!(medoid(&["zz"], &m).is_err());
        assert!(medoid(&[], &m).is_err());
    }

    fn blobs(centers: &[(f64, f64)], per: usize) -> DistanceMatrix {
        let mut pts = Vec::new();
        for (ci, &(x, y)) in centers.iter().enumerate() {
            for j in 0..per {
                let a = (ci * per + j) as f64;
                pts.push(vec![x + 0.05 * a.sin(), y + 0.05 * a.cos()]);
            }
        }
        let rows = pts
            .iter()
            .map(|p| pts.iter().map(|q| euclid(p, q)).collect())
            .collect();
        DistanceMatrix::from_rows(rows, (0..pts.len()).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn selects_two_blobs() {
        let m = blobs(&[(0.0, 0.0), (10.0, 0.0)], 8);
        let s = select_structure(&m, &StructureConfig::default()).unwrap();
        assert_eq!(s.k, 2);
        assert_eq!(s.dims, 2);
        assert!(!s.k_truncated);
        assert_eq!(s.scores.len(), 7 * 9);
    }

    #[test]
    fn selects_three_equidistant_blobs() {
        let h = 10.0 * 3f64.sqrt() / 2.0;
        let m = blobs(&[(0.0, 0.0), (10.0, 0.0), (5.0, h)], 7);
        let s = select_structure(&m, &StructureConfig::default()).unwrap();
        assert_eq!(s.k, 3);
    }

    #[test]
    fn three_points_truncate_k_range() {
        let m = matrix_1d(&[0.0, 1.0, 7.0]);
        let s = select_structure(&m, &StructureConfig::default()).unwrap();
        assert!(s.k_truncated);
        assert_eq!(s.k, 2);
        assert!(s.scores.iter().all(|&(_, k, _)| k == 2));
        assert!(select_structure(&matrix_1d(&[0.0, 1.0]), &StructureConfig::default()).is_err());
    }
}
