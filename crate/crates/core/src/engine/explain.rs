//! Query-time workflow: pick a target, fetch the closest prototype and build
//! the Original, Sparse and Aligned Sparse counterfactuals.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::align::{align_prototype, AlignmentInfo};
use super::rpeaks::{detect_rpeaks_auto, PeakConfig};
use super::sparsify::{sparsify_best_effort, Mask, MaskRuns, SparseOutcome, SparsifyConfig};
use crate::classifier::{Model, ProbVec};
use crate::data::{LabelVec, Series};
use crate::error::{CfxError, Result};
use crate::io::{f32_to_le_bytes, read_f32_file, read_json, write_atomic, write_json_atomic};
use crate::proto::{dtw_distance, Band, PrototypeDB, PrototypeEntry};

/// Name of the class preferred as a counterfactual target.
pub const NORMAL_CLASS: &str = "NORM";

/// Prefers the normal class when a pathological class is predicted and
/// normal is not; otherwise the most probable class not currently
/// predicted (lowest index on ties).
pub fn select_target_class(
    probs: &ProbVec,
    predicted: &LabelVec,
    class_names: &[String],
) -> Result<usize> {
    if probs.len() != predicted.len() || class_names.len() != predicted.len() {
        return Err(CfxError::Shape {
            expected: format!("{} classes", class_names.len()),
            got: format!(
                "{} probabilities and {} labels",
                probs.len(),
                predicted.len()
            ),
        });
    }
    if let Some(norm) = class_names.iter().position(|c| c == NORMAL_CLASS) {
        let pathological = predicted.positives().into_iter().any(|c| c != norm);
        if pathological && !predicted.is_set(norm) {
            return Ok(norm);
        }
    }
    (0..predicted.len())
        .filter(|&c| !predicted.is_set(c))
        .fold(None, |best: Option<usize>, c| match best {
            Some(b) if probs.get(b) >= probs.get(c) => Some(b),
            _ => Some(c),
        })
        .ok_or(CfxError::NoTarget)
}

/// The target-class entry closest to `query` by DTW (first on ties).
pub fn retrieve_prototype<'a>(
    db: &'a PrototypeDB,
    query: &Series,
    target: usize,
    band: Option<usize>,
) -> Result<(&'a PrototypeEntry, f64)> {
    let candidates: Vec<&PrototypeEntry> = db.for_class(target).collect();
    if candidates.is_empty() {
        let name = db
            .class_names
            .get(target)
            .cloned()
            .unwrap_or_else(|| target.to_string());
        return Err(CfxError::NoPrototypes(name));
    }
    let distances = candidates
        .par_iter()
        .map(|e| dtw_distance(query, &e.series, band))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, d) in distances.iter().enumerate() {
        if *d < distances[best] {
            best = i;
        }
    }
    Ok((candidates[best], distances[best]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    Original,
    Sparse,
    #[serde(rename = "Aligned Sparse")]
    AlignedSparse,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [
        VariantKind::Original,
        VariantKind::Sparse,
        VariantKind::AlignedSparse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Original => "Original",
            VariantKind::Sparse => "Sparse",
            VariantKind::AlignedSparse => "Aligned Sparse",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = CfxError;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CfxError::InvalidArgument(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub kind: VariantKind,
    pub series: Series,
    pub mask: Mask,
    pub probs: ProbVec,
    pub labels: LabelVec,
    /// Prediction equals the one-hot target.
    pub valid: bool,
    pub keep_ratio: f64,
    pub attempts: usize,
}

impl Variant {
    fn from_outcome(kind: VariantKind, o: SparseOutcome) -> Variant {
        Variant {
            kind,
            valid: o.reached,
            series: o.series,
            mask: o.mask,
            probs: o.probs,
            labels: o.labels,
            keep_ratio: o.keep_ratio,
            attempts: o.attempts,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualResult {
    pub query_id: String,
    pub shape: (usize, usize),
    pub class_names: Vec<String>,
    pub initial_probs: ProbVec,
    pub initial_labels: LabelVec,
    pub target_class: usize,
    /// The target was chosen automatically.
    pub target_auto: bool,
    pub prototype_id: String,
    pub prototype_distance: f64,
    pub variants: Vec<Variant>,
    pub aligned_valid: Option<bool>,
    pub alignment: Option<AlignmentInfo>,
    pub alignment_error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub target: Option<usize>,
    pub band: Band,
    pub sparsify: SparsifyConfig,
    pub peaks: PeakConfig,
}

impl CounterfactualResult {
    pub fn variant(&self, kind: VariantKind) -> Option<&Variant> {
        self.variants.iter().find(|v| v.kind == kind)
    }

    pub fn target_labels(&self) -> LabelVec {
        LabelVec::one_hot(self.class_names.len(), self.target_class)
    }

    pub fn target_name(&self) -> &str {
        &self.class_names[self.target_class]
    }

    /// Predicted class names joined by `;`, or `none`.
    pub fn initial_class(&self) -> String {
        let names = self.initial_labels.names(&self.class_names);
        if names.is_empty() {
            "none".to_string()
        } else {
            names.join(";")
        }
    }
}

pub fn explain(
    query: &Series,
    model: &Model,
    db: &PrototypeDB,
    options: &ExplainOptions,
) -> Result<CounterfactualResult> {
    options.sparsify.validate()?;
    if db.class_names.len() != model.n_classes() {
        return Err(CfxError::Shape {
            expected: format!("{} classes in the prototype database", model.n_classes()),
            got: format!("{}", db.class_names.len()),
        });
    }
    if db.shape != query.shape() {
        return Err(CfxError::Shape {
            expected: format!("query shape {:?}", db.shape),
            got: format!("{:?}", query.shape()),
        });
    }
    let (initial_probs, initial_labels) = model.predict(query)?;
    let target = match options.target {
        Some(t) if t >= db.class_names.len() => {
            return Err(CfxError::InvalidArgument(format!(
                "target index {t} out of range"
            )));
        }
        Some(t) if initial_labels.is_set(t) => {
            return Err(CfxError::TargetIsCurrent(db.class_names[t].clone()));
        }
        Some(t) => t,
        None => select_target_class(&initial_probs, &initial_labels, &db.class_names)?,
    };
    let target_labels = LabelVec::one_hot(db.class_names.len(), target);

    let band = options.band.resolve(query.n_timesteps());
    let (entry, distance) = retrieve_prototype(db, query, target, band)?;
    let proto = &entry.series;
    let (t, c) = query.shape();

    let (probs, labels) = model.predict(proto)?;
    let mut variants = vec![Variant {
        kind: VariantKind::Original,
        series: proto.clone(),
        mask: Mask::ones(t, c),
        valid: labels == target_labels,
        probs,
        labels,
        keep_ratio: 1.0,
        attempts: 1,
    }];

    let (query_peaks, _) = detect_rpeaks_auto(query, &options.peaks);
    let sparse = sparsify_best_effort(
        query,
        proto,
        model,
        &target_labels,
        &query_peaks,
        &options.sparsify,
    )?;
    variants.push(Variant::from_outcome(VariantKind::Sparse, sparse));

    let (mut alignment, mut alignment_error, mut aligned_valid) = (None, None, None);
    match align_prototype(proto, query, &options.peaks) {
        Ok(aligned) => {
            let outcome = sparsify_best_effort(
                query,
                &aligned.series,
                model,
                &target_labels,
                &query_peaks,
                &options.sparsify,
            )?;
            aligned_valid = Some(outcome.reached);
            variants.push(Variant::from_outcome(VariantKind::AlignedSparse, outcome));
            alignment = Some(aligned.info);
        }
        Err(CfxError::AlignmentUnavailable(why)) => {
            log::warn!("{}: aligned variant skipped: {why}", query.record_id());
            alignment_error = Some(why);
        }
        Err(e) => return Err(e),
    }

    for v in &mut variants {
        v.series = std::mem::replace(&mut v.series, query.clone()).with_id(query.record_id());
    }

    Ok(CounterfactualResult {
        query_id: query.record_id().to_string(),
        shape: (t, c),
        class_names: db.class_names.clone(),
        initial_probs,
        initial_labels,
        target_class: target,
        target_auto: options.target.is_none(),
        prototype_id: entry.record_id.clone(),
        prototype_distance: distance,
        variants,
        aligned_valid,
        alignment,
        alignment_error,
    })
}

#[derive(Serialize, Deserialize)]
struct VariantFile {
    name: VariantKind,
    probs: Vec<f32>,
    labels: Vec<String>,
    valid: bool,
    keep_ratio: f64,
    mask_fraction: f64,
    attempts: usize,
    mask: MaskRuns,
}

#[derive(Serialize, Deserialize)]
struct ResultFile {
    query_id: String,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "C")]
    c: usize,
    classes: Vec<String>,
    initial_prediction: Vec<String>,
    initial_probs: Vec<f32>,
    target_class: String,
    target_auto: bool,
    prototype_id: String,
    prototype_distance: f64,
    aligned_valid: Option<bool>,
    alignment: Option<AlignmentInfo>,
    alignment_error: Option<String>,
    /// Order of the series in `cf_signals.f32`.
    variants: Vec<VariantFile>,
}

pub const RESULT_FILE: &str = "result.json";
pub const SIGNALS_FILE: &str = "cf_signals.f32";

impl CounterfactualResult {
    /// Writes `result.json` and `cf_signals.f32` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let names = |l: &LabelVec| {
            l.names(&self.class_names)
                .into_iter()
                .map(String::from)
                .collect()
        };
        let file = ResultFile {
            query_id: self.query_id.clone(),
            t: self.shape.0,
            c: self.shape.1,
            classes: self.class_names.clone(),
            initial_prediction: names(&self.initial_labels),
            initial_probs: self.initial_probs.values().to_vec(),
            target_class: self.target_name().to_string(),
            target_auto: self.target_auto,
            prototype_id: self.prototype_id.clone(),
            prototype_distance: self.prototype_distance,
            aligned_valid: self.aligned_valid,
            alignment: self.alignment.clone(),
            alignment_error: self.alignment_error.clone(),
            variants: self
                .variants
                .iter()
                .map(|v| VariantFile {
                    name: v.kind,
                    probs: v.probs.values().to_vec(),
                    labels: names(&v.labels),
                    valid: v.valid,
                    keep_ratio: v.keep_ratio,
                    mask_fraction: v.mask.fraction(),
                    attempts: v.attempts,
                    mask: v.mask.runs(),
                })
                .collect(),
        };
        let mut signals = Vec::new();
        for v in &self.variants {
            signals.extend_from_slice(&f32_to_le_bytes(v.series.values()));
        }
        write_atomic(&dir.join(SIGNALS_FILE), &signals)?;
        write_json_atomic(&dir.join(RESULT_FILE), &file)
    }

    pub fn load(dir: &Path) -> Result<CounterfactualResult> {
        let file: ResultFile = read_json(&dir.join(RESULT_FILE), "result.json")?;
        let (t, c) = (file.t, file.c);
        let raw = read_f32_file(&dir.join(SIGNALS_FILE), file.variants.len() * t * c)?;
        let l = file.classes.len();
        let labels = |names: &[String]| -> Result<LabelVec> {
            let idx = names
                .iter()
                .map(|n| {
                    file.classes
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| CfxError::UnknownClass(n.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LabelVec::from_indices(l, &idx))
        };
        let target_class = file
            .classes
            .iter()
            .position(|c| *c == file.target_class)
            .ok_or_else(|| CfxError::UnknownClass(file.target_class.clone()))?;
        let stride = t * c;
        let variants = file
            .variants
            .iter()
            .enumerate()
            .map(|(i, v)| {
                Ok(Variant {
                    kind: v.name,
                    series: Series::new(
                        file.query_id.clone(),
                        t,
                        c,
                        raw[i * stride..(i + 1) * stride].to_vec(),
                    )?,
                    mask: Mask::from_runs(t, &v.mask)?,
                    probs: ProbVec::new(v.probs.clone())?,
                    labels: labels(&v.labels)?,
                    valid: v.valid,
                    keep_ratio: v.keep_ratio,
                    attempts: v.attempts,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CounterfactualResult {
            query_id: file.query_id,
            shape: (t, c),
            initial_probs: ProbVec::new(file.initial_probs)?,
            initial_labels: labels(&file.initial_prediction)?,
            class_names: file.classes,
            target_class,
            target_auto: file.target_auto,
            prototype_id: file.prototype_id,
            prototype_distance: file.prototype_distance,
            variants,
            aligned_valid: file.aligned_valid,
            alignment: file.alignment,
            alignment_error: file.alignment_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn target_selection_rules() {
        let classes = names(&["NORM", "MI", "STTC", "CD", "HYP"]);
        let probs = ProbVec::new(vec![0.1, 0.9, 0.4, 0.2, 0.3]).unwrap();
        let mi = LabelVec::one_hot(5, 1);
        assert_eq!(select_target_class(&probs, &mi, &classes).unwrap(), 0);

        let probs = ProbVec::new(vec![0.9, 0.45, 0.3, 0.2, 0.45]).unwrap();
        let norm = LabelVec::one_hot(5, 0);
        assert_eq!(select_target_class(&probs, &norm, &classes).unwrap(), 1);

        let all = LabelVec::from_indices(5, &[0, 1, 2, 3, 4]);
        assert!(matches!(
            select_target_class(&probs, &all, &classes),
            Err(CfxError::NoTarget)
        ));

        // without a normal class the probability rule applies
        let abc = names(&["A", "B", "C"]);
        let p = ProbVec::new(vec![0.9, 0.2, 0.6]).unwrap();
        assert_eq!(
            select_target_class(&p, &LabelVec::one_hot(3, 0), &abc).unwrap(),
            2
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for v in VariantKind::ALL {
            assert_eq!(v.name().parse::<VariantKind>().unwrap(), v);
            assert_eq!(
                serde_json::to_string(&v).unwrap(),
                format!("\"{}\"", v.name())
            );
        }
    }
}
