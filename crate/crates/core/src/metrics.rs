//! Counterfactual quality metrics and report aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::{Model, ModelThresholds, ProbVec};
use crate::data::{shift_series, LabelVec, Series};
use crate::engine::{CounterfactualResult, VariantKind};
use crate::error::{CfxError, Result};
use crate::io::write_atomic;
use crate::proto::{dtw_distance, Band};
use crate::{mix_seed, stable_hash};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    /// Noise std as fractions of the series std.
    pub fractions: Vec<f64>,
    pub n_trials: usize,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        NoiseLevels {
            fractions: vec![0.01, 0.02, 0.05],
            n_trials: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSet(pub Vec<i64>);

impl Default for ShiftSet {
    fn default() -> Self {
        ShiftSet(vec![-2, -1, 1, 2])
    }
}

fn same_shape(x: &Series, x_cf: &Series) -> Result<()> {
    if x.shape() != x_cf.shape() {
        return Err(CfxError::Shape {
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", x_cf.shape()),
        });
    }
    Ok(())
}

/// Every target class is predicted for the counterfactual and its
/// prediction differs from the original's.
pub fn validity_from_labels(pred_x: &LabelVec, pred_cf: &LabelVec, target: &LabelVec) -> bool {
    let reaches = target.positives().into_iter().all(|c| pred_cf.is_set(c));
    reaches && pred_cf != pred_x
}

pub fn validity(model: &Model, x: &Series, x_cf: &Series, target: &LabelVec) -> Result<bool> {
    same_shape(x, x_cf)?;
    Ok(validity_from_labels(
        &model.predict_labels(x)?,
        &model.predict_labels(x_cf)?,
        target,
    ))
}

/// The full thresholded prediction equals `target`.
pub fn validity_multi(model: &Model, x_cf: &Series, target: &LabelVec) -> Result<bool> {
    let pred = model.predict_labels(x_cf)?;
    if pred.len() != target.len() {
        return Err(CfxError::Shape {
            expected: format!("{} target bits", pred.len()),
            got: format!("{}", target.len()),
        });
    }
    Ok(pred == *target)
}

/// Fraction of coordinates changed by more than `0.01 * sigma_train`.
pub fn sparsity_ratio(x: &Series, x_cf: &Series, sigma_train: f64) -> Result<f64> {
    same_shape(x, x_cf)?;
    let tau = 0.01 * sigma_train;
    let changed = x
        .values()
        .iter()
        .zip(x_cf.values())
        .filter(|(&a, &b)| (f64::from(b) - f64::from(a)).abs() > tau)
        .count();
    Ok(changed as f64 / x.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSparsity {
    /// Fraction of coordinates that differ at all.
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
}

pub fn lp_sparsity(x: &Series, x_cf: &Series) -> Result<LpSparsity> {
    same_shape(x, x_cf)?;
    let (mut n0, mut l1, mut sq) = (0usize, 0.0, 0.0);
    for (&a, &b) in x.values().iter().zip(x_cf.values()) {
        let d = (f64::from(b) - f64::from(a)).abs();
        if a != b {
            n0 += 1;
        }
        l1 += d;
        sq += d * d;
    }
    Ok(LpSparsity {
        l0: n0 as f64 / x.len() as f64,
        l1,
        l2: sq.sqrt(),
    })
}

fn population_std(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    (values
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Fraction of Gaussian-perturbed copies whose prediction is unchanged.
pub fn noise_stability(
    model: &Model,
    x_cf: &Series,
    levels: &NoiseLevels,
    seed: u64,
) -> Result<f64> {
    if levels.fractions.is_empty() || levels.n_trials == 0 {
        return Err(CfxError::InvalidArgument(
            "noise levels need fractions and trials".into(),
        ));
    }
    let std = population_std(x_cf.values());
    if std == 0.0 {
        return Ok(1.0);
    }
    let reference = model.predict_labels(x_cf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = 0usize;
    for &gamma in &levels.fractions {
        let normal = Normal::new(0.0, gamma * std)
            .map_err(|e| CfxError::InvalidArgument(format!("noise level {gamma}: {e}")))?;
        for _ in 0..levels.n_trials {
            let noisy = x_cf
                .values()
                .iter()
                .map(|&v| (f64::from(v) + normal.sample(&mut rng)) as f32)
                .collect();
            if model.predict_labels(&x_cf.with_values(noisy)?)? == reference {
                kept += 1;
            }
        }
    }
    Ok(kept as f64 / (levels.fractions.len() * levels.n_trials) as f64)
}

/// `1 / (1 + mean_tau DTW(x, shift(x, tau)) / sqrt(T * C))`.
pub fn temporal_stability(x_cf: &Series, shifts: &ShiftSet, band: Option<usize>) -> Result<f64> {
    if shifts.0.is_empty() {
        return Err(CfxError::InvalidArgument("empty shift set".into()));
    }
    if let Some(s) = shifts.0.iter().find(|&&s| s == 0) {
        return Err(CfxError::InvalidArgument(format!(
            "shift {s} must be nonzero"
        )));
    }
    let norm = ((x_cf.len()) as f64).sqrt();
    let mut total = 0.0;
    for &tau in &shifts.0 {
        total += dtw_distance(x_cf, &shift_series(x_cf, tau)?, band)?;
    }
    let mean = total / shifts.0.len() as f64;
    Ok(1.0 / (1.0 + mean / norm))
}

pub fn decision_margin(probs: &ProbVec, thresholds: &ModelThresholds, class: usize) -> Result<f64> {
    if class >= probs.len() || class >= thresholds.len() {
        return Err(CfxError::InvalidArgument(format!(
            "class index {class} out of range"
        )));
    }
    Ok(f64::from(probs.get(class)) - thresholds.get(class))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QWeights {
    pub validity: f64,
    pub sparsity: f64,
    pub stability: f64,
    pub margin: f64,
}

impl Default for QWeights {
    fn default() -> Self {
        QWeights {
            validity: 0.25,
            sparsity: 0.25,
            stability: 0.25,
            margin: 0.25,
        }
    }
}

impl QWeights {
    pub fn new(validity: f64, sparsity: f64, stability: f64, margin: f64) -> Result<Self> {
        let w = [validity, sparsity, stability, margin];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|&v| v == 0.0) {
            return Err(CfxError::InvalidArgument(
                "quality weights must be non-negative and not all zero".into(),
            ));
        }
        Ok(QWeights {
            validity,
            sparsity,
            stability,
            margin,
        })
    }
}

/// One evaluated counterfactual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub query_id: String,
    pub initial_class: String,
    pub target_class: String,
    pub variant: String,
    pub validity: f64,
    pub validity_multi: f64,
    pub sparsity_ratio: f64,
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub noise_stability: f64,
    pub temporal_stability: f64,
    pub decision_margin: f64,
    pub q: Option<f64>,
}

/// `w_v * validity + w_s * (1 - sparsity_ratio) + w_st * noise_stability +
/// w_m * decision_margin`.
pub fn composite_quality(entry: &MetricsEntry, weights: &QWeights) -> f64 {
    weights.validity * entry.validity
        + weights.sparsity * (1.0 - entry.sparsity_ratio)
        + weights.stability * entry.noise_stability
        + weights.margin * entry.decision_margin
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Training-data standard deviation for the sparsity tolerance.
    pub sigma_train: f64,
    pub noise: NoiseLevels,
    pub shifts: ShiftSet,
    pub band: Band,
    pub weights: Option<QWeights>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sigma_train: 1.0,
            noise: NoiseLevels::default(),
            shifts: ShiftSet::default(),
            band: Band::Auto,
            weights: Some(QWeights::default()),
            seed: 0,
        }
    }
}

/// Metrics for every variant of one result; predictions are recomputed
/// with `model`.
pub fn evaluate_result(
    result: &CounterfactualResult,
    query: &Series,
    model: &Model,
    config: &EvalConfig,
) -> Result<Vec<MetricsEntry>> {
    if query.shape() != result.shape {
        return Err(CfxError::Shape {
            expected: format!("query {:?}", result.shape),
            got: format!("{:?}", query.shape()),
        });
    }
    let target = result.target_labels();
    let pred_x = model.predict_labels(query)?;
    let band = config.band.resolve(query.n_timesteps());
    let query_hash = stable_hash(&result.query_id);
    result
        .variants
        .iter()
        .map(|v| {
            let x_cf = &v.series;
            let (probs, pred_cf) = model.predict(x_cf)?;
            let lp = lp_sparsity(query, x_cf)?;
            let kind_index = VariantKind::ALL
                .iter()
                .position(|k| *k == v.kind)
                .unwrap_or(0) as u64;
            let mut entry = MetricsEntry {
                query_id: result.query_id.clone(),
                initial_class: result.initial_class(),
                target_class: result.target_name().to_string(),
                variant: v.kind.name().to_string(),
                validity: f64::from(u8::from(validity_from_labels(&pred_x, &pred_cf, &target))),
                validity_multi: f64::from(u8::from(pred_cf == target)),
                sparsity_ratio: sparsity_ratio(query, x_cf, config.sigma_train)?,
                l0: lp.l0,
                l1: lp.l1,
                l2: lp.l2,
                noise_stability: noise_stability(
                    model,
                    x_cf,
                    &config.noise,
                    mix_seed(config.seed, &[query_hash, kind_index]),
                )?,
                temporal_stability: temporal_stability(x_cf, &config.shifts, band)?,
                decision_margin: decision_margin(&probs, model.thresholds(), result.target_class)?,
                q: None,
            };
            entry.q = config.weights.map(|w| composite_quality(&entry, &w));
            Ok(entry)
        })
        .collect()
}

pub const CSV_HEADER: [&str; 14] = [
    "query_id",
    "initial_class",
    "target_class",
    "variant",
    "validity",
    "validity_multi",
    "sparsity_ratio",
    "l0",
    "l1",
    "l2",
    "noise_stability",
    "temporal_stability",
    "decision_margin",
    "q",
];

const METRIC_NAMES: [&str; 10] = [
    "validity",
    "validity_multi",
    "sparsity_ratio",
    "l0",
    "l1",
    "l2",
    "noise_stability",
    "temporal_stability",
    "decision_margin",
    "q",
];

impl MetricsEntry {
    fn metric_values(&self) -> [Option<f64>; 10] {
        [
            Some(self.validity),
            Some(self.validity_multi),
            Some(self.sparsity_ratio),
            Some(self.l0),
            Some(self.l1),
            Some(self.l2),
            Some(self.noise_stability),
            Some(self.temporal_stability),
            Some(self.decision_margin),
            self.q,
        ]
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| CfxError::format("csv", e))?;
    for row in rows {
        w.write_record(&row)
            .map_err(|e| CfxError::format("csv", e))?;
    }
    w.into_inner()
        .map_err(|e| CfxError::format("csv", e.to_string()))
}

/// Per-counterfactual CSV with [`CSV_HEADER`].
pub fn metrics_csv(entries: &[MetricsEntry]) -> Result<Vec<u8>> {
    csv_bytes(
        &CSV_HEADER,
        entries.iter().map(|e| {
            let mut row = vec![
                e.query_id.clone(),
                e.initial_class.clone(),
                e.target_class.clone(),
                e.variant.clone(),
            ];
            row.extend(e.metric_values().iter().map(|v| fmt_opt(*v)));
            row
        }),
    )
}

pub fn write_metrics_csv(path: &Path, entries: &[MetricsEntry]) -> Result<()> {
    write_atomic(path, &metrics_csv(entries)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    InitialClass,
    TargetClass,
    Variant,
}

impl GroupKey {
    pub fn name(self) -> &'static str {
        match self {
            GroupKey::InitialClass => "initial_class",
            GroupKey::TargetClass => "target_class",
            GroupKey::Variant => "variant",
        }
    }

    fn value(self, e: &MetricsEntry) -> &str {
        match self {
            GroupKey::InitialClass => &e.initial_class,
            GroupKey::TargetClass => &e.target_class,
            GroupKey::Variant => &e.variant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: Vec<String>,
    pub n: usize,
    /// Means in the order of the CSV metric columns; `None` when a metric is
    /// missing from every entry of the group.
    pub means: Vec<Option<f64>>,
}

fn variant_rank(name: &str) -> usize {
    VariantKind::ALL
        .iter()
        .position(|k| k.name() == name)
        .unwrap_or(VariantKind::ALL.len())
}

/// Mean of every metric within each group. Groups are ordered by key with
/// variants in their canonical order; sums run over sorted values so the
/// result does not depend on entry order.
pub fn aggregate_report(
    entries: &[MetricsEntry],
    group_by: &[GroupKey],
) -> Result<Vec<AggregateRow>> {
    if entries.is_empty() {
        return Err(CfxError::Empty("metrics entries"));
    }
    let sort_key = |e: &MetricsEntry| -> Vec<(usize, String)> {
        group_by
            .iter()
            .map(|k| {
                let v = k.value(e).to_string();
                let rank = if *k == GroupKey::Variant {
                    variant_rank(&v)
                } else {
                    0
                };
                (rank, v)
            })
            .collect()
    };
    let mut groups: BTreeMap<Vec<(usize, String)>, Vec<&MetricsEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(sort_key(e)).or_default().push(e);
    }
    Ok(groups
        .into_iter()
        .map(|(key, members)| {
            let means = (0..METRIC_NAMES.len())
                .map(|m| {
                    let mut vals: Vec<f64> = members
                        .iter()
                        .filter_map(|e| e.metric_values()[m])
                        .collect();
                    if vals.is_empty() {
                        return None;
                    }
                    vals.sort_by(f64::total_cmp);
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            AggregateRow {
                key: key.into_iter().map(|(_, v)| v).collect(),
                n: members.len(),
                means,
            }
        })
        .collect())
}

pub fn aggregate_csv(rows: &[AggregateRow], group_by: &[GroupKey]) -> Result<Vec<u8>> {
    let mut header: Vec<&str> = group_by.iter().map(|k| k.name()).collect();
    header.push("n");
    header.extend(METRIC_NAMES);
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            let mut row = r.key.clone();
            row.push(r.n.to_string());
            row.extend(r.means.iter().map(|v| fmt_opt(*v)));
            row
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::FnClassifier;

    fn s(v: &[f32]) -> Series {
        Series::from_channel("s", v).unwrap()
    }

    fn names_model() -> Model {
        // class = index of the largest of the first three samples
        Model::new(
            FnClassifier::new(3, |s: &Series| {
                let v = &s.values()[..3];
                let m = (0..3).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
                (0..3).map(|i| if i == m { 0.9 } else { 0.1 }).collect()
            }),
            ModelThresholds::uniform(3, 0.5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn validity_examples() {
        let m = names_model();
        let x = s(&[1.0, 0.0, 0.0, 0.0]);
        let to_b = s(&[0.0, 1.0, 0.0, 0.0]);
        let to_c = s(&[0.0, 0.0, 1.0, 0.0]);
        let b = LabelVec::one_hot(3, 1);
        assert!(validity(&m, &x, &to_b, &b).unwrap());
        assert!(!validity(&m, &x, &x, &LabelVec::one_hot(3, 0)).unwrap());
        assert!(!validity(&m, &x, &to_c, &b).unwrap());
    }

    #[test]
    fn validity_multi_examples() {
        let m = names_model();
        let to_b = s(&[0.0, 1.0, 0.0, 0.0]);
        assert!(validity_multi(&m, &to_b, &LabelVec::one_hot(3, 1)).unwrap());
        assert!(!validity_multi(&m, &to_b, &LabelVec::from_indices(3, &[1, 2])).unwrap());
        let single = Model::new(
            FnClassifier::new(1, |s: &Series| {
                vec![if s.values()[0] > 0.0 { 0.9 } else { 0.1 }]
            }),
            ModelThresholds::uniform(1, 0.5).unwrap(),
        )
        .unwrap();
        assert!(validity_multi(&single, &to_b, &LabelVec::zeros(1)).unwrap());
        assert!(!validity_multi(&single, &to_b, &LabelVec::one_hot(1, 0)).unwrap());
    }

    #[test]
    fn sparsity_examples() {
        let x = Series::new("x", 1000, 12, vec![0.0; 12000]).unwrap();
        assert_eq!(sparsity_ratio(&x, &x, 1.0).unwrap(), 0.0);
        let mut v = vec![0.0; 12000];
        v[777] = 0.5;
        let one = x.with_values(v).unwrap();
        assert_eq!(sparsity_ratio(&x, &one, 1.0).unwrap(), 1.0 / 12000.0);
        let all = x.with_values(vec![0.1; 12000]).unwrap();
        assert_eq!(sparsity_ratio(&x, &all, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn lp_examples() {
        let x = Series::new("x", 2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(
            lp_sparsity(&x, &x).unwrap(),
            LpSparsity {
                l0: 0.0,
                l1: 0.0,
                l2: 0.0
            }
        );
        let one = x.with_values(vec![0.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            lp_sparsity(&x, &one).unwrap(),
            LpSparsity {
                l0: 0.25,
                l1: 3.0,
                l2: 3.0
            }
        );
        let two = x.with_values(vec![3.0, 0.0, 0.0, -4.0]).unwrap();
        let lp = lp_sparsity(&x, &two).unwrap();
        assert_eq!((lp.l1, lp.l2), (7.0, 5.0));
    }

    #[test]
    fn noise_stability_examples() {
        let constant = Model::new(
            FnClassifier::new(2, |_: &Series| vec![0.9, 0.1]),
            ModelThresholds::uniform(2, 0.5).unwrap(),
        )
        .unwrap();
        let x = s(&[0.3, -1.0, 2.0, 0.5]);
        assert_eq!(
            noise_stability(&constant, &x, &NoiseLevels::default(), 1).unwrap(),
            1.0
        );
        assert_eq!(
            noise_stability(&names_model(), &s(&[2.0; 4]), &NoiseLevels::default(), 1).unwrap(),
            1.0
        );

        let inside = s(&[5.0, 0.0, 0.0, 0.0]);
        let boundary = s(&[1.0, 0.999, 0.0, 0.0]);
        let a = noise_stability(&names_model(), &inside, &NoiseLevels::default(), 9).unwrap();
        let b = noise_stability(&names_model(), &boundary, &NoiseLevels::default(), 9).unwrap();
        assert_eq!(a, 1.0);
        assert!(a >= b && b < 1.0, "{a} {b}");
        assert_eq!(
            noise_stability(&names_model(), &boundary, &NoiseLevels::default(), 9).unwrap(),
            b
        );
    }

    #[test]
    fn temporal_stability_examples() {
        assert_eq!(
            temporal_stability(&s(&[1.5; 10]), &ShiftSet::default(), None).unwrap(),
            1.0
        );
        let saw = s(&[0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 2.0, 3.0]);
        let v = temporal_stability(&saw, &ShiftSet::default(), None).unwrap();
        assert!(v > 0.0 && v <= 1.0);
        let mut total = 0.0;
        for tau in [-2, -1, 1, 2] {
            total += dtw_distance(&saw, &shift_series(&saw, tau).unwrap(), None).unwrap();
        }
        assert_eq!(v, 1.0 / (1.0 + total / 4.0 / 8f64.sqrt()));
    }

    #[test]
    fn margin_examples() {
        let t = ModelThresholds::new(vec![0.5, 0.316]).unwrap();
        let p = ProbVec::new(vec![0.8, 0.9]).unwrap();
        assert!((decision_margin(&p, &t, 0).unwrap() - f64::from(0.8f32) + 0.5).abs() < 1e-15);
        assert!((decision_margin(&p, &t, 1).unwrap() - 0.584).abs() < 1e-7);
        let eq = ProbVec::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(decision_margin(&eq, &t, 0).unwrap(), 0.0);
        assert!(decision_margin(&p, &t, 2).is_err());
    }

    fn entry(variant: &str, v: f64, sr: f64, st: f64, m: f64) -> MetricsEntry {
        MetricsEntry {
            query_id: "q".into(),
            initial_class: "MI".into(),
            target_class: "NORM".into(),
            variant: variant.into(),
            validity: v,
            validity_multi: v,
            sparsity_ratio: sr,
            l0: sr,
            l1: 1.0,
            l2: 1.0,
            noise_stability: st,
            temporal_stability: 1.0,
            decision_margin: m,
            q: None,
        }
    }

    #[test]
    fn composite_examples() {
        let w = |a, b, c, d| QWeights::new(a, b, c, d).unwrap();
        assert_eq!(
            composite_quality(&entry("Sparse", 1.0, 0.5, 0.5, 0.5), &w(1.0, 0.0, 0.0, 0.0)),
            1.0
        );
        assert!(
            (composite_quality(
                &entry("Sparse", 1.0, 0.78, 0.5, 0.5),
                &w(0.0, 1.0, 0.0, 0.0)
            ) - 0.22)
                .abs()
                < 1e-12
        );
        let q = composite_quality(&entry("Sparse", 1.0, 0.8, 1.0, 0.6), &QWeights::default());
        assert!((q - 0.70).abs() < 1e-12);
        assert!(QWeights::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let one = [entry("Sparse", 1.0, 0.4, 1.0, 0.2)];
        let rows = aggregate_report(&one, &[GroupKey::Variant]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].means[0], Some(1.0));
        assert_eq!(rows[0].means[2], Some(0.4));

        let two = [
            entry("Sparse", 1.0, 0.4, 1.0, 0.2),
            entry("Sparse", 0.0, 0.4, 1.0, 0.2),
        ];
        assert_eq!(
            aggregate_report(&two, &[GroupKey::Variant]).unwrap()[0].means[0],
            Some(0.5)
        );

        let mixed = [
            entry("Aligned Sparse", 0.0, 0.7, 1.0, 0.1),
            entry("Original", 1.0, 0.9, 1.0, 0.3),
            entry("Sparse", 1.0, 0.4, 1.0, 0.2),
        ];
        let rows = aggregate_report(&mixed, &[GroupKey::Variant]).unwrap();
        let keys: Vec<&str> = rows.iter().map(|r| r.key[0].as_str()).collect();
        assert_eq!(keys, ["Original", "Sparse", "Aligned Sparse"]);
        assert!(aggregate_report(&[], &[GroupKey::Variant]).is_err());
    }

    #[test]
    fn csv_header() {
        let bytes = metrics_csv(&[entry("Sparse", 1.0, 0.4, 1.0, 0.2)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "query_id,initial_class,target_class,variant,validity,validity_multi,sparsity_ratio,l0,l1,l2,noise_stability,temporal_stability,decision_margin,q"
        );
        assert_eq!(text.lines().count(), 2);
    }
}
