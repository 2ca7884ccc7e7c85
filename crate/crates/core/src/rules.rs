//! Attribution tensors and their conversion into instance-level interval
//! rules.
//!
//! A rule for record `n` and class `l` is a conjunction of half-open
//! intervals `(low, high]` over the record's most important coordinates. The
//! coordinates are those whose absolute attribution reaches a single global
//! percentile threshold; the bounds come from joint random perturbations that
//! keep the full thresholded prediction vector unchanged.
//!
//! Interval bounds are binary32 values, like the series they constrain.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Model;
use crate::data::{Dataset, LabelVec, Series};
use crate::error::{CfxError, Result};
use crate::io::{f32_to_le_bytes, read_f32_file, read_json, write_atomic, write_json_atomic};
use crate::mix_seed;

/// Importance values laid out `[record][class][time][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionTensor {
    pub n_records: usize,
    pub n_classes: usize,
    pub n_timesteps: usize,
    pub n_channels: usize,
    pub provenance: String,
    values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct AttrManifest {
    n_records: usize,
    n_classes: usize,
    n_timesteps: usize,
    n_channels: usize,
    provenance: String,
}

impl AttributionTensor {
    pub fn new(
        n_records: usize,
        n_classes: usize,
        n_timesteps: usize,
        n_channels: usize,
        values: Vec<f32>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let expected = n_records * n_classes * n_timesteps * n_channels;
        if values.len() != expected {
            return Err(CfxError::Shape {
                expected: format!("{expected} attribution values"),
                got: format!("{}", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CfxError::NonFinite(format!("attribution index {i}")));
        }
        Ok(AttributionTensor {
            n_records,
            n_classes,
            n_timesteps,
            n_channels,
            provenance: provenance.into(),
            values,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The `T x C` slice for one record and class.
    pub fn slice(&self, record: usize, class: usize) -> &[f32] {
        let stride = self.n_timesteps * self.n_channels;
        let start = (record * self.n_classes + class) * stride;
        &self.values[start..start + stride]
    }

    pub fn check_matches(&self, dataset: &Dataset) -> Result<()> {
        let (t, c) = dataset.shape().unwrap_or((0, 0));
        let want = (dataset.len(), dataset.n_classes(), t, c);
        let got = (
            self.n_records,
            self.n_classes,
            self.n_timesteps,
            self.n_channels,
        );
        if want != got {
            return Err(CfxError::Shape {
                expected: format!("attributions {want:?} (records, classes, T, C)"),
                got: format!("{got:?}"),
            });
        }
        Ok(())
    }

    /// Resolves `path` to the `attr.f32` file and its manifest sibling.
    fn paths(path: &Path) -> (PathBuf, PathBuf) {
        if path.is_dir() {
            (path.join("attr.f32"), path.join("attr_manifest.json"))
        } else {
            let dir = path.parent().unwrap_or(Path::new("."));
            (path.to_path_buf(), dir.join("attr_manifest.json"))
        }
    }

    /// Loads from a directory or from the `attr.f32` path itself.
    pub fn load(path: &Path) -> Result<Self> {
        let (data, manifest) = Self::paths(path);
        let m: AttrManifest = read_json(&manifest, "attr_manifest.json")?;
        let n = m.n_records * m.n_classes * m.n_timesteps * m.n_channels;
        let values = read_f32_file(&data, n)?;
        Self::new(
            m.n_records,
            m.n_classes,
            m.n_timesteps,
            m.n_channels,
            values,
            m.provenance,
        )
    }

    /// Writes `attr.f32` and `attr_manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("attr.f32"), &f32_to_le_bytes(&self.values))?;
        write_json_atomic(
            &dir.join("attr_manifest.json"),
            &AttrManifest {
                n_records: self.n_records,
                n_classes: self.n_classes,
                n_timesteps: self.n_timesteps,
                n_channels: self.n_channels,
                provenance: self.provenance.clone(),
            },
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Uniform,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub percentile: f64,
    pub n_perturb: usize,
    pub perturb_scale: f64,
    pub perturb_kind: PerturbKind,
    /// Maximum halvings of the interval box while re-checking it.
    pub max_contractions: usize,
    pub seed: u64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            percentile: 90.0,
            n_perturb: 1000,
            perturb_scale: 1.0,
            perturb_kind: PerturbKind::Uniform,
            max_contractions: 20,
            seed: 0,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(CfxError::InvalidArgument(format!(
                "percentile {} is not in (0, 100)",
                self.percentile
            )));
        }
        if self.n_perturb == 0 {
            return Err(CfxError::InvalidArgument(
                "n_perturb must be positive".into(),
            ));
        }
        if !(self.perturb_scale.is_finite() && self.perturb_scale >= 0.0) {
            return Err(CfxError::InvalidArgument(
                "perturb_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// `value in (low, high]` at one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conjunct {
    pub time: usize,
    pub channel: usize,
    pub low: f64,
    pub high: f64,
}

impl Conjunct {
    #[inline]
    pub fn contains(&self, value: f32) -> bool {
        let v = f64::from(value);
        self.low < v && v <= self.high
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFlags {
    /// No perturbation kept the prediction; intervals are points.
    pub no_preserving_draw: bool,
    /// The box was shrunk after re-checking.
    pub contracted: bool,
    pub zero_coverage: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRule {
    pub record_id: String,
    pub class_index: usize,
    pub class: String,
    pub conjuncts: Vec<Conjunct>,
    /// Thresholded prediction of the source record.
    pub prediction: Vec<bool>,
    pub coverage: f64,
    pub confidence: f64,
    pub flags: RuleFlags,
}

impl IntervalRule {
    pub fn matches(&self, series: &Series) -> bool {
        self.conjuncts
            .iter()
            .all(|k| k.contains(series.get(k.time, k.channel)))
    }
}

/// Percentile of the absolute values by linear interpolation between the
/// order statistics around rank `p/100 * (n - 1)`.
pub fn percentile_abs(values: &[f32], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CfxError::Empty("attribution tensor"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(CfxError::InvalidArgument(format!(
            "percentile {percentile} is not in [0, 100]"
        )));
    }
    let mut abs: Vec<f64> = values.iter().map(|v| f64::from(v.abs())).collect();
    let rank = percentile / 100.0 * (abs.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, &mut a, rest) = abs.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return Ok(a);
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(a + frac * (b - a))
}

/// The global importance threshold over every record and class.
pub fn global_threshold(attr: &AttributionTensor, percentile: f64) -> Result<f64> {
    percentile_abs(attr.values(), percentile)
}

/// Flat indices `t * C + c` with `|value| >= threshold`.
pub fn important_features(attr_slice: &[f32], threshold: f64) -> Vec<usize> {
    attr_slice
        .iter()
        .enumerate()
        .filter_map(|(i, v)| (f64::from(v.abs()) >= threshold).then_some(i))
        .collect()
}

/// Per-coordinate population standard deviation over a dataset, `T x C`.
pub fn feature_sigma(dataset: &Dataset) -> Result<Vec<f64>> {
    let (t, c) = dataset.shape().ok_or(CfxError::Empty("dataset"))?;
    let n = dataset.len() as f64;
    let mut mean = vec![0.0; t * c];
    for r in &dataset.records {
        for (m, &v) in mean.iter_mut().zip(r.values()) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; t * c];
    for r in &dataset.records {
        for ((s, &v), m) in var.iter_mut().zip(r.values()).zip(&mean) {
            let d = f64::from(v) - m;
            *s += d * d;
        }
    }
    Ok(var.into_iter().map(|s| (s / n).sqrt()).collect())
}

fn point_low(x: f32) -> f64 {
    f64::from(x.next_down())
}

/// Shrinks the bound `b` halfway toward `x`, staying on the binary32 grid.
fn halve_toward(x: f32, b: f64) -> f64 {
    let mid = (f64::from(x) + b) / 2.0;
    if b > f64::from(x) {
        f64::from((mid as f32).max(x))
    } else {
        f64::from((mid as f32).min(x.next_down()))
    }
}

/// Draws one value uniformly from `(low, high]` on the binary32 grid.
pub fn sample_in(conjunct: &Conjunct, rng: &mut impl Rng) -> f32 {
    let v = if conjunct.high > conjunct.low {
        rng.random_range(conjunct.low..conjunct.high) as f32
    } else {
        conjunct.high as f32
    };
    if f64::from(v) <= conjunct.low {
        (conjunct.low as f32).next_up()
    } else if f64::from(v) > conjunct.high {
        conjunct.high as f32
    } else {
        v
    }
}

/// Tightest label-preserving intervals around `series` at `features`.
///
/// `M` joint perturbations are drawn; per feature the interval is the
/// tightest `(low, high]` around the original value and every perturbed
/// value whose prediction vector matched. The resulting box is then checked
/// with `M` uniform draws and halved toward the original while any of them
/// changes the prediction.
pub fn stable_intervals(
    model: &Model,
    series: &Series,
    features: &[usize],
    sigma: &[f64],
    config: &RuleConfig,
) -> Result<(Vec<Conjunct>, RuleFlags)> {
    config.validate()?;
    if features.is_empty() {
        return Err(CfxError::Empty("feature set"));
    }
    if sigma.len() != series.len() {
        return Err(CfxError::Shape {
            expected: format!("{} sigma values", series.len()),
            got: format!("{}", sigma.len()),
        });
    }
    let c = series.n_channels();
    let original = model.predict_labels(series)?;
    let x: Vec<f32> = features.iter().map(|&f| series.values()[f]).collect();
    let mut lo: Vec<f32> = x.clone();
    let mut hi: Vec<f32> = x.clone();
    let mut flags = RuleFlags::default();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut buf = series.values().to_vec();
    let mut preserved = 0usize;
    let mut draw = vec![0f32; features.len()];
    for _ in 0..config.n_perturb {
        for (k, &f) in features.iter().enumerate() {
            let s = sigma[f] * config.perturb_scale;
            let delta = match config.perturb_kind {
                PerturbKind::Uniform => s * rng.random_range(-1.0f64..=1.0),
                PerturbKind::Gaussian => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                }
            };
            draw[k] = (f64::from(x[k]) + delta) as f32;
            buf[f] = draw[k];
        }
        let candidate = series.with_values(buf.clone())?;
        if model.predict_labels(&candidate)? == original {
            preserved += 1;
            for k in 0..features.len() {
                lo[k] = lo[k].min(draw[k]);
                hi[k] = hi[k].max(draw[k]);
            }
        }
    }
    if preserved == 0 {
        flags.no_preserving_draw = true;
        log::debug!(
            "no perturbation preserved the prediction of {}",
            series.record_id()
        );
    }

    let mut conjuncts: Vec<Conjunct> = features
        .iter()
        .enumerate()
        .map(|(k, &f)| Conjunct {
            time: f / c,
            channel: f % c,
            low: point_low(lo[k]),
            high: f64::from(hi[k]),
        })
        .collect();

    let mut check_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[1]));
    for round in 0..=config.max_contractions {
        let mut flipped = false;
        let mut buf = series.values().to_vec();
        for _ in 0..config.n_perturb {
            for (k, &f) in features.iter().enumerate() {
                buf[f] = sample_in(&conjuncts[k], &mut check_rng);
            }
            if model.predict_labels(&series.with_values(buf.clone())?)? != original {
                flipped = true;
                break;
            }
        }
        if !flipped {
            break;
        }
        flags.contracted = true;
        for (k, conj) in conjuncts.iter_mut().enumerate() {
            if round == config.max_contractions {
                conj.low = point_low(x[k]);
                conj.high = f64::from(x[k]);
            } else {
                conj.low = halve_toward(x[k], conj.low);
                conj.high = halve_toward(x[k], conj.high);
            }
        }
    }
    Ok((conjuncts, flags))
}

/// Coverage and confidence of `rule` given precomputed dataset predictions.
pub fn score_rule_with_predictions(
    rule: &IntervalRule,
    dataset: &Dataset,
    predictions: &[LabelVec],
) -> (f64, f64) {
    if dataset.is_empty() {
        return (0.0, 0.0);
    }
    let mut covered = 0usize;
    let mut agreeing = 0usize;
    for (r, p) in dataset.records.iter().zip(predictions) {
        if rule.matches(r) {
            covered += 1;
            if p.bits() == rule.prediction.as_slice() {
                agreeing += 1;
            }
        }
    }
    let coverage = covered as f64 / dataset.len() as f64;
    let confidence = if covered == 0 {
        0.0
    } else {
        agreeing as f64 / covered as f64
    };
    (coverage, confidence)
}

pub fn predict_dataset(dataset: &Dataset, model: &Model) -> Result<Vec<LabelVec>> {
    dataset
        .records
        .par_iter()
        .map(|r| model.predict_labels(r))
        .collect()
}

/// Coverage: fraction of records satisfying every conjunct. Confidence:
/// fraction of those whose prediction equals the rule's source prediction.
pub fn score_rule(rule: &IntervalRule, dataset: &Dataset, model: &Model) -> Result<(f64, f64)> {
    if let Some((t, c)) = dataset.shape() {
        if let Some(k) = rule
            .conjuncts
            .iter()
            .find(|k| k.time >= t || k.channel >= c)
        {
            return Err(CfxError::Shape {
                expected: format!("coordinates within {t}x{c}"),
                got: format!("({}, {})", k.time, k.channel),
            });
        }
    }
    let predictions = predict_dataset(dataset, model)?;
    Ok(score_rule_with_predictions(rule, dataset, &predictions))
}

/// Reusable extraction context: model, global threshold and feature scales.
pub struct RuleExtractor<'a> {
    pub model: &'a Model,
    pub threshold: f64,
    pub sigma: &'a [f64],
    pub class_names: &'a [String],
    pub config: &'a RuleConfig,
}

impl RuleExtractor<'_> {
    /// Rule for `class_index` on `series`, without coverage and confidence.
    pub fn extract(
        &self,
        series: &Series,
        attr_slice: &[f32],
        class_index: usize,
        seed: u64,
    ) -> Result<IntervalRule> {
        if attr_slice.len() != series.len() {
            return Err(CfxError::Shape {
                expected: format!("{} attribution values", series.len()),
                got: format!("{}", attr_slice.len()),
            });
        }
        let prediction = self.model.predict_labels(series)?;
        if !prediction.is_set(class_index) {
            return Err(CfxError::InvalidArgument(format!(
                "class '{}' is not predicted for record '{}'",
                self.class_names[class_index],
                series.record_id()
            )));
        }
        let features = important_features(attr_slice, self.threshold);
        if features.is_empty() {
            return Err(CfxError::EmptyRule {
                threshold: self.threshold,
            });
        }
        let config = RuleConfig {
            seed,
            ..self.config.clone()
        };
        let (conjuncts, flags) =
            stable_intervals(self.model, series, &features, self.sigma, &config)?;
        Ok(IntervalRule {
            record_id: series.record_id().to_string(),
            class_index,
            class: self.class_names[class_index].clone(),
            conjuncts,
            prediction: prediction.bits().to_vec(),
            coverage: 0.0,
            confidence: 0.0,
            flags,
        })
    }
}

/// Single-rule convenience wrapper: threshold and scales supplied by the
/// caller, scored against `dataset`.
#[allow(clippy::too_many_arguments)]
pub fn extract_rule(
    model: &Model,
    series: &Series,
    attr_slice: &[f32],
    class_index: usize,
    threshold: f64,
    sigma: &[f64],
    dataset: &Dataset,
    config: &RuleConfig,
) -> Result<IntervalRule> {
    let extractor = RuleExtractor {
        model,
        threshold,
        sigma,
        class_names: &dataset.class_names,
        config,
    };
    let mut rule = extractor.extract(series, attr_slice, class_index, config.seed)?;
    let (coverage, confidence) = score_rule(&rule, dataset, model)?;
    rule.coverage = coverage;
    rule.confidence = confidence;
    rule.flags.zero_coverage = coverage == 0.0;
    Ok(rule)
}

#[derive(Clone, Debug, Default)]
pub struct RuleSet {
    pub rules: Vec<IntervalRule>,
    /// `(record_id, class)` pairs skipped because no coordinate reached the
    /// threshold.
    pub empty: Vec<(String, String)>,
    pub threshold: f64,
}

/// Extracts one rule per positively predicted class of every record and
/// scores each against the same dataset.
pub fn extract_rules(
    dataset: &Dataset,
    attr: &AttributionTensor,
    model: &Model,
    config: &RuleConfig,
) -> Result<RuleSet> {
    config.validate()?;
    attr.check_matches(dataset)?;
    let threshold = global_threshold(attr, config.percentile)?;
    let sigma = feature_sigma(dataset)?;
    let predictions = predict_dataset(dataset, model)?;
    let extractor = RuleExtractor {
        model,
        threshold,
        sigma: &sigma,
        class_names: &dataset.class_names,
        config,
    };
    let jobs: Vec<(usize, usize)> = predictions
        .iter()
        .enumerate()
        .flat_map(|(r, p)| p.positives().into_iter().map(move |c| (r, c)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(r, c)| {
            let seed = mix_seed(config.seed, &[r as u64, c as u64]);
            match extractor.extract(&dataset.records[r], attr.slice(r, c), c, seed) {
                Ok(mut rule) => {
                    let (coverage, confidence) =
                        score_rule_with_predictions(&rule, dataset, &predictions);
                    rule.coverage = coverage;
                    rule.confidence = confidence;
                    rule.flags.zero_coverage = coverage == 0.0;
                    Ok(Ok(rule))
                }
                Err(CfxError::EmptyRule { .. }) => Ok(Err((
                    dataset.records[r].record_id().to_string(),
                    dataset.class_names[c].clone(),
                ))),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = RuleSet {
        threshold,
        ..RuleSet::default()
    };
    for o in outcomes {
        match o {
            Ok(rule) => set.rules.push(rule),
            Err(skipped) => set.empty.push(skipped),
        }
    }
    Ok(set)
}

/// Per class, the probability drop when a window centred on `t` in channel
/// `c` is replaced by that channel's mean. Layout `[class][time][channel]`.
pub fn occlusion_attribution(model: &Model, series: &Series, window: usize) -> Result<Vec<f32>> {
    let (t_len, c_len) = series.shape();
    if window == 0 || window > t_len {
        return Err(CfxError::InvalidArgument(format!(
            "window {window} is not in 1..={t_len}"
        )));
    }
    let l = model.n_classes();
    let base = model.predict_proba(series)?;
    let mut out = vec![0f32; l * t_len * c_len];
    for c in 0..c_len {
        let channel = series.channel(c);
        let mean = (channel.iter().map(|&v| f64::from(v)).sum::<f64>() / t_len as f64) as f32;
        let mut cache: Vec<Option<Vec<f32>>> = vec![None; t_len - window + 1];
        for t in 0..t_len {
            let start = t.saturating_sub(window / 2).min(t_len - window);
            if cache[start].is_none() {
                let mut values = series.values().to_vec();
                for s in start..start + window {
                    values[s * c_len + c] = mean;
                }
                let p = model.predict_proba(&series.with_values(values)?)?;
                cache[start] = Some(
                    base.values()
                        .iter()
                        .zip(p.values())
                        .map(|(a, b)| a - b)
                        .collect(),
                );
            }
            let drops = cache[start].as_ref().expect("filled above");
            for (class, d) in drops.iter().enumerate() {
                out[(class * t_len + t) * c_len + c] = *d;
            }
        }
    }
    Ok(out)
}

/// Occlusion attributions for every record of a dataset.
pub fn occlusion_tensor(
    dataset: &Dataset,
    model: &Model,
    window: usize,
) -> Result<AttributionTensor> {
    let (t, c) = dataset.shape().ok_or(CfxError::Empty("dataset"))?;
    let parts = dataset
        .records
        .par_iter()
        .map(|r| occlusion_attribution(model, r, window))
        .collect::<Result<Vec<_>>>()?;
    AttributionTensor::new(
        dataset.len(),
        model.n_classes(),
        t,
        c,
        parts.concat(),
        format!("occlusion(window={window})"),
    )
}

/// One JSON object per line.
pub fn write_rules_jsonl(path: &Path, rules: &[IntervalRule]) -> Result<()> {
    let mut text = String::new();
    for rule in rules {
        text.push_str(&serde_json::to_string(rule).map_err(|e| CfxError::format("rule", e))?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_rules_jsonl(path: &Path) -> Result<Vec<IntervalRule>> {
    let text = std::fs::read_to_string(path).map_err(|e| CfxError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CfxError::format("rules file", e)))
        .collect()
}
