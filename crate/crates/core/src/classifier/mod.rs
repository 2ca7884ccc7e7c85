//! Classifier abstraction, per-class decision thresholds and threshold
//! calibration.

mod external;
mod reference;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{LabelVec, Series};
use crate::error::{CfxError, Result};

pub use external::{serve_adapter, ExternalAdapter};
pub use reference::{
    fit_calibrated, fit_reference_classifier, summary_features, FitConfig, ModelFile,
    ReferenceClassifier, FEATURES_PER_CHANNEL,
};

/// Independent per-class probabilities (multi-label, no sum constraint).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVec(Vec<f32>);

impl ProbVec {
    pub fn new(probs: Vec<f32>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CfxError::Model(format!("probability {p} outside [0, 1]")));
        }
        Ok(ProbVec(probs))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class_index: usize) -> f32 {
        self.0[class_index]
    }
}

/// Per-class decision thresholds, each strictly inside (0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ModelThresholds(Vec<f64>);

impl ModelThresholds {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if let Some(v) = t.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(CfxError::InvalidArgument(format!(
                "threshold {v} outside (0, 1)"
            )));
        }
        Ok(ModelThresholds(t))
    }

    pub fn uniform(n_classes: usize, t: f64) -> Result<Self> {
        ModelThresholds::new(vec![t; n_classes])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class_index: usize) -> f64 {
        self.0[class_index]
    }
}

impl TryFrom<Vec<f64>> for ModelThresholds {
    type Error = CfxError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ModelThresholds::new(v)
    }
}

impl From<ModelThresholds> for Vec<f64> {
    fn from(t: ModelThresholds) -> Self {
        t.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Reference,
    External,
    /// In-process implementations supplied by the caller.
    Custom,
}

/// A probabilistic multi-label classifier over fixed-shape series.
///
/// Implementations must be deterministic for a fixed state.
pub trait Classifier: Send + Sync {
    fn n_classes(&self) -> usize;

    /// Expected `(T, C)`, when the classifier is tied to one input shape.
    fn input_shape(&self) -> Option<(usize, usize)> {
        None
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Custom
    }

    fn predict_proba(&self, series: &Series) -> Result<ProbVec>;
}

/// Wraps a closure as a classifier.
pub struct FnClassifier<F> {
    n_classes: usize,
    f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&Series) -> Vec<f32> + Send + Sync,
{
    pub fn new(n_classes: usize, f: F) -> Self {
        FnClassifier { n_classes, f }
    }
}

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&Series) -> Vec<f32> + Send + Sync,
{
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, series: &Series) -> Result<ProbVec> {
        ProbVec::new((self.f)(series))
    }
}

/// A classifier paired with its calibrated thresholds.
#[derive(Clone)]
pub struct Model {
    classifier: Arc<dyn Classifier>,
    thresholds: ModelThresholds,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("kind", &self.classifier.kind())
            .field("thresholds", &self.thresholds)
            .finish()
    }
}

impl Model {
    pub fn new(classifier: impl Classifier + 'static, thresholds: ModelThresholds) -> Result<Self> {
        Model::from_arc(Arc::new(classifier), thresholds)
    }

    pub fn from_arc(classifier: Arc<dyn Classifier>, thresholds: ModelThresholds) -> Result<Self> {
        if classifier.n_classes() != thresholds.len() {
            return Err(CfxError::Shape {
                expected: format!("{} thresholds", classifier.n_classes()),
                got: format!("{} thresholds", thresholds.len()),
            });
        }
        Ok(Model {
            classifier,
            thresholds,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.classifier.kind()
    }

    pub fn n_classes(&self) -> usize {
        self.thresholds.len()
    }

    pub fn thresholds(&self) -> &ModelThresholds {
        &self.thresholds
    }

    pub fn classifier(&self) -> &Arc<dyn Classifier> {
        &self.classifier
    }

    pub fn with_thresholds(&self, thresholds: ModelThresholds) -> Result<Model> {
        Model::from_arc(self.classifier.clone(), thresholds)
    }

    pub fn predict_proba(&self, series: &Series) -> Result<ProbVec> {
        if let Some(shape) = self.classifier.input_shape() {
            if shape != series.shape() {
                return Err(CfxError::Shape {
                    expected: format!("(T, C) = {shape:?}"),
                    got: format!("{:?}", series.shape()),
                });
            }
        }
        let probs = self.classifier.predict_proba(series)?;
        if probs.len() != self.n_classes() {
            return Err(CfxError::Model(format!(
                "classifier returned {} probabilities for {} classes",
                probs.len(),
                self.n_classes()
            )));
        }
        Ok(probs)
    }

    pub fn predict(&self, series: &Series) -> Result<(ProbVec, LabelVec)> {
        let probs = self.predict_proba(series)?;
        let labels = predict_labels(&probs, &self.thresholds)?;
        Ok((probs, labels))
    }

    pub fn predict_labels(&self, series: &Series) -> Result<LabelVec> {
        Ok(self.predict(series)?.1)
    }
}

/// Positive iff the probability strictly exceeds the class threshold.
pub fn predict_labels(probs: &ProbVec, thresholds: &ModelThresholds) -> Result<LabelVec> {
    if probs.len() != thresholds.len() {
        return Err(CfxError::Shape {
            expected: format!("{} probabilities", thresholds.len()),
            got: format!("{} probabilities", probs.len()),
        });
    }
    Ok(LabelVec::new(
        probs
            .values()
            .iter()
            .zip(thresholds.values())
            .map(|(&p, &t)| f64::from(p) > t)
            .collect(),
    ))
}

/// Threshold grid spacing for [`select_thresholds`].
pub const THRESHOLD_STEP: f64 = 0.001;
/// Threshold assigned to classes without positive examples.
pub const FALLBACK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSelection {
    pub thresholds: ModelThresholds,
    /// Binary F1 reached at the chosen threshold, per class.
    pub f1: Vec<f64>,
    /// Classes that fell back to [`FALLBACK_THRESHOLD`].
    pub fallback: Vec<bool>,
}

/// Binary F1 as the exact ratio `2tp / (2tp + fp + fn)`.
#[derive(Clone, Copy, Debug)]
struct F1Ratio {
    num: u64,
    den: u64,
}

impl F1Ratio {
    fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    fn greater_than(self, other: F1Ratio) -> bool {
        // 0/0 counts as zero
        let (a, b) = (self.num as u128, self.den.max(1) as u128);
        let (c, d) = (other.num as u128, other.den.max(1) as u128);
        a * d > c * b
    }
}

/// Per class, sweeps the open grid 0.001..=0.999 and keeps the smallest
/// threshold maximizing binary F1 under the strict `p > t` rule.
pub fn select_thresholds(probs: &[ProbVec], labels: &[LabelVec]) -> Result<ThresholdSelection> {
    if probs.is_empty() {
        return Err(CfxError::Empty("threshold calibration set"));
    }
    if probs.len() != labels.len() {
        return Err(CfxError::Shape {
            expected: format!("{} label rows", probs.len()),
            got: format!("{} label rows", labels.len()),
        });
    }
    let n_classes = probs[0].len();
    if let Some(bad) = probs
        .iter()
        .map(ProbVec::len)
        .chain(labels.iter().map(LabelVec::len))
        .find(|&l| l != n_classes)
    {
        return Err(CfxError::Shape {
            expected: format!("{n_classes} classes"),
            got: format!("{bad} classes"),
        });
    }

    let steps = (1.0 / THRESHOLD_STEP).round() as usize;
    let mut thresholds = Vec::with_capacity(n_classes);
    let mut f1 = Vec::with_capacity(n_classes);
    let mut fallback = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let column: Vec<(f64, bool)> = probs
            .iter()
            .zip(labels)
            .map(|(p, l)| (f64::from(p.get(class)), l.is_set(class)))
            .collect();
        let n_pos = column.iter().filter(|(_, y)| *y).count();
        if n_pos == 0 {
            log::warn!("class {class} has no positive labels; threshold falls back to 0.5");
            thresholds.push(FALLBACK_THRESHOLD);
            f1.push(0.0);
            fallback.push(true);
            continue;
        }
        let mut best: Option<(f64, F1Ratio)> = None;
        for i in 1..steps {
            let t = i as f64 / steps as f64;
            let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
            for &(p, y) in &column {
                match (p > t, y) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
            let score = F1Ratio {
                num: 2 * tp,
                den: 2 * tp + fp + fneg,
            };
            if best.is_none_or(|(_, b)| score.greater_than(b)) {
                best = Some((t, score));
            }
        }
        let (t, score) = best.expect("grid is non-empty");
        thresholds.push(t);
        f1.push(score.value());
        fallback.push(false);
    }
    Ok(ThresholdSelection {
        thresholds: ModelThresholds::new(thresholds)?,
        f1,
        fallback,
    })
}
