//! Shallow built-in classifier: one-vs-rest logistic regression over
//! per-channel summary statistics.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, ModelKind, ModelThresholds, ProbVec};
use crate::data::{Dataset, Series};
use crate::error::{CfxError, Result};
use crate::io::{read_json, write_json_atomic};

/// mean, std, min, max, mean |diff|, max |diff|
pub const FEATURES_PER_CHANNEL: usize = 6;

pub fn summary_features(series: &Series) -> Vec<f64> {
    let (t_len, c_len) = series.shape();
    let mut out = Vec::with_capacity(c_len * FEATURES_PER_CHANNEL);
    for c in 0..c_len {
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut diff_sum, mut diff_max) = (0.0f64, 0.0f64);
        let mut prev = f64::from(series.get(0, c));
        for t in 0..t_len {
            let v = f64::from(series.get(t, c));
            sum += v;
            sum_sq += v * v;
            lo = lo.min(v);
            hi = hi.max(v);
            if t > 0 {
                let d = (v - prev).abs();
                diff_sum += d;
                diff_max = diff_max.max(d);
            }
            prev = v;
        }
        let n = t_len as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        out.extend_from_slice(&[mean, var.sqrt(), lo, hi, diff_sum / (n - 1.0), diff_max]);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 2000,
            learning_rate: 0.5,
            l2: 1e-3,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceClassifier {
    pub n_timesteps: usize,
    pub n_channels: usize,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// `[class][feature]`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ReferenceClassifier {
    fn standardized(&self, series: &Series) -> Vec<f64> {
        summary_features(series)
            .into_iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(f, (m, s))| (f - m) / s)
            .collect()
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }
}

impl Classifier for ReferenceClassifier {
    fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn input_shape(&self) -> Option<(usize, usize)> {
        Some((self.n_timesteps, self.n_channels))
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Reference
    }

    fn predict_proba(&self, series: &Series) -> Result<ProbVec> {
        let z = self.standardized(series);
        ProbVec::new(
            self.logits(&z)
                .into_iter()
                .map(|l| sigmoid(l) as f32)
                .collect(),
        )
    }
}

/// Fits the reference classifier with full-batch gradient descent on the
/// mean binary cross-entropy. Deterministic for a fixed `config.seed`.
pub fn fit_reference_classifier(
    dataset: &Dataset,
    config: &FitConfig,
) -> Result<ReferenceClassifier> {
    let (t_len, c_len) = dataset.shape().ok_or(CfxError::Empty("training dataset"))?;
    let n_classes = dataset.n_classes();
    for class in 0..n_classes {
        if !dataset.labels.iter().any(|l| l.is_set(class)) {
            return Err(CfxError::DegenerateClass(
                dataset.class_names[class].clone(),
            ));
        }
    }

    let raw: Vec<Vec<f64>> = dataset.records.iter().map(summary_features).collect();
    let n = raw.len() as f64;
    let n_feat = c_len * FEATURES_PER_CHANNEL;
    let mut feature_mean = vec![0.0; n_feat];
    let mut feature_scale = vec![0.0; n_feat];
    for j in 0..n_feat {
        let m = raw.iter().map(|r| r[j]).sum::<f64>() / n;
        let v = raw.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        feature_mean[j] = m;
        feature_scale[j] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
    }
    let xs: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, f)| (f - feature_mean[j]) / feature_scale[j])
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..n_feat).map(|_| rng.random_range(-0.01..0.01)).collect())
        .collect();
    let mut bias = vec![0.0; n_classes];

    for _ in 0..config.epochs {
        for class in 0..n_classes {
            let w = &mut weights[class];
            let mut grad_w = vec![0.0; n_feat];
            let mut grad_b = 0.0;
            for (x, labels) in xs.iter().zip(&dataset.labels) {
                let logit = bias[class] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                let err = sigmoid(logit) - if labels.is_set(class) { 1.0 } else { 0.0 };
                for (g, xi) in grad_w.iter_mut().zip(x) {
                    *g += err * xi;
                }
                grad_b += err;
            }
            for (wi, g) in w.iter_mut().zip(&grad_w) {
                *wi -= config.learning_rate * (g / n + config.l2 * *wi);
            }
            bias[class] -= config.learning_rate * grad_b / n;
        }
    }

    Ok(ReferenceClassifier {
        n_timesteps: t_len,
        n_channels: c_len,
        feature_mean,
        feature_scale,
        weights,
        bias,
    })
}

/// Fits the classifier and calibrates per-class thresholds on the same
/// records.
pub fn fit_calibrated(dataset: &Dataset, config: &FitConfig) -> Result<ModelFile> {
    let classifier = fit_reference_classifier(dataset, config)?;
    let probs = dataset
        .records
        .iter()
        .map(|r| classifier.predict_proba(r))
        .collect::<Result<Vec<_>>>()?;
    let selection = super::select_thresholds(&probs, &dataset.labels)?;
    Ok(ModelFile {
        kind: ModelKind::Reference,
        class_names: dataset.class_names.clone(),
        thresholds: selection.thresholds,
        classifier,
    })
}

/// On-disk form of a calibrated reference model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub class_names: Vec<String>,
    pub thresholds: ModelThresholds,
    pub classifier: ReferenceClassifier,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<ModelFile> {
        let file: ModelFile = read_json(path, "model file")?;
        if file.kind != ModelKind::Reference {
            return Err(CfxError::format(
                "model file",
                "only reference models can be loaded",
            ));
        }
        if file.class_names.len() != file.thresholds.len()
            || file.classifier.n_classes() != file.thresholds.len()
        {
            return Err(CfxError::format("model file", "class count mismatch"));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    pub fn into_model(self) -> Result<super::Model> {
        super::Model::new(self.classifier, self.thresholds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{predict_labels, Model};
    use crate::data::{LabelVec, NormStats};

    /// Two classes that differ only in amplitude.
    fn separable(n_per_class: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per_class {
            let class = i % 2;
            let amp = if class == 0 { 1.0 } else { 3.0 };
            let phase: f64 = rng.random_range(0.0..6.28);
            let s = Series::from_fn(format!("r{i}"), 50, 2, |t, c| {
                (amp * (t as f64 * 0.3 + phase + c as f64).sin() + rng.random_range(-0.1..0.1))
                    as f32
            })
            .unwrap();
            records.push(s);
            labels.push(LabelVec::one_hot(2, class));
        }
        Dataset::new(
            records,
            labels,
            vec!["A".into(), "B".into()],
            NormStats::IDENTITY,
        )
        .unwrap()
    }

    #[test]
    fn separates_amplitude_classes() {
        let train = separable(20, 1);
        let clf = fit_reference_classifier(&train, &FitConfig::default()).unwrap();
        let model = Model::new(clf, ModelThresholds::uniform(2, 0.5).unwrap()).unwrap();
        let test = separable(10, 2);
        for (s, l) in test.records.iter().zip(&test.labels) {
            let probs = model.predict_proba(s).unwrap();
            let class = l.single_class().unwrap();
            assert!(f64::from(probs.get(class)) > model.thresholds().get(class));
            assert_eq!(&predict_labels(&probs, model.thresholds()).unwrap(), l);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let d = separable(10, 3);
        let cfg = FitConfig {
            epochs: 200,
            ..FitConfig::default()
        };
        assert_eq!(
            fit_reference_classifier(&d, &cfg).unwrap(),
            fit_reference_classifier(&d, &cfg).unwrap()
        );
    }

    #[test]
    fn never_positive_class_is_rejected() {
        let mut d = separable(5, 4);
        for l in &mut d.labels {
            *l = LabelVec::one_hot(2, 0);
        }
        assert!(matches!(
            fit_reference_classifier(&d, &FitConfig::default()),
            Err(CfxError::DegenerateClass(name)) if name == "B"
        ));
    }

    #[test]
    fn wrong_channel_count_is_a_shape_error() {
        let d = separable(5, 5);
        let clf = fit_reference_classifier(
            &d,
            &FitConfig {
                epochs: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let model = Model::new(clf, ModelThresholds::uniform(2, 0.5).unwrap()).unwrap();
        let s = Series::from_fn("x", 50, 3, |_, _| 0.0).unwrap();
        assert!(matches!(
            model.predict_proba(&s),
            Err(CfxError::Shape { .. })
        ));
    }

    #[test]
    fn model_file_roundtrip() {
        let d = separable(5, 6);
        let clf = fit_reference_classifier(
            &d,
            &FitConfig {
                epochs: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let file = ModelFile {
            kind: ModelKind::Reference,
            class_names: d.class_names.clone(),
            thresholds: ModelThresholds::new(vec![0.307, 0.316]).unwrap(),
            classifier: clf,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        file.save(&p).unwrap();
        assert_eq!(ModelFile::load(&p).unwrap(), file);
    }
}
