//! Records, labels, normalization and the on-disk dataset layout.
//!
//! A dataset directory holds three files:
//!
//! * `manifest.json`: shape, class list and normalization constants
//! * `signals.f32`: little-endian binary32, row-major `[record][time][channel]`
//! * `labels.csv`: `record_id,CLASS1;CLASS2;...` per record, in signal order

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CfxError, Result};
use crate::io::{f32_to_le_bytes, read_f32_file, read_json, write_atomic, write_json_atomic};

/// Denominator guard used by [`normalize`].
pub const NORM_EPS: f64 = 1e-7;

/// One multivariate record, `T` time steps by `C` channels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    record_id: String,
    n_timesteps: usize,
    n_channels: usize,
    values: Vec<f32>,
}

impl Series {
    pub fn new(
        record_id: impl Into<String>,
        n_timesteps: usize,
        n_channels: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let record_id = record_id.into();
        if n_timesteps < 2 || n_channels < 1 {
            return Err(CfxError::Shape {
                expected: "T >= 2 and C >= 1".into(),
                got: format!("T={n_timesteps}, C={n_channels}"),
            });
        }
        if values.len() != n_timesteps * n_channels {
            return Err(CfxError::Shape {
                expected: format!("{} values", n_timesteps * n_channels),
                got: format!("{} values", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CfxError::NonFinite(format!(
                "record '{record_id}', t={}, c={}",
                i / n_channels,
                i % n_channels
            )));
        }
        Ok(Series {
            record_id,
            n_timesteps,
            n_channels,
            values,
        })
    }

    /// Builds a single-channel series.
    pub fn from_channel(record_id: impl Into<String>, samples: &[f32]) -> Result<Self> {
        Series::new(record_id, samples.len(), 1, samples.to_vec())
    }

    pub fn from_fn(
        record_id: impl Into<String>,
        n_timesteps: usize,
        n_channels: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(n_timesteps * n_channels);
        for t in 0..n_timesteps {
            for c in 0..n_channels {
                values.push(f(t, c));
            }
        }
        Series::new(record_id, n_timesteps, n_channels, values)
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn n_timesteps(&self) -> usize {
        self.n_timesteps
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_timesteps, self.n_channels)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f32 {
        self.values[t * self.n_channels + c]
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_channels..(t + 1) * self.n_channels]
    }

    pub fn channel(&self, c: usize) -> Vec<f32> {
        (0..self.n_timesteps).map(|t| self.get(t, c)).collect()
    }

    /// Same shape and id, new values.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Series> {
        Series::new(
            self.record_id.clone(),
            self.n_timesteps,
            self.n_channels,
            values,
        )
    }

    pub fn with_id(mut self, record_id: impl Into<String>) -> Series {
        self.record_id = record_id.into();
        self
    }

    pub(crate) fn check_same_shape(&self, other: &Series) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CfxError::Shape {
                expected: format!("{:?}", self.shape()),
                got: format!("{:?}", other.shape()),
            });
        }
        Ok(())
    }
}

/// Multi-hot label vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVec(Vec<bool>);

impl LabelVec {
    pub fn new(bits: Vec<bool>) -> Self {
        LabelVec(bits)
    }

    pub fn zeros(n_classes: usize) -> Self {
        LabelVec(vec![false; n_classes])
    }

    pub fn one_hot(n_classes: usize, class_index: usize) -> Self {
        let mut bits = vec![false; n_classes];
        bits[class_index] = true;
        LabelVec(bits)
    }

    pub fn from_indices(n_classes: usize, indices: &[usize]) -> Self {
        let mut bits = vec![false; n_classes];
        for &i in indices {
            bits[i] = true;
        }
        LabelVec(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn is_set(&self, class_index: usize) -> bool {
        self.0[class_index]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn positives(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect()
    }

    /// The single positive class, when exactly one bit is set.
    pub fn single_class(&self) -> Option<usize> {
        match self.positives().as_slice() {
            [only] => Some(*only),
            _ => None,
        }
    }

    pub fn names<'a>(&self, class_names: &'a [String]) -> Vec<&'a str> {
        self.positives()
            .into_iter()
            .map(|i| class_names[i].as_str())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    /// Identity scaling up to the `NORM_EPS` guard.
    pub const IDENTITY: NormStats = NormStats {
        mu: 0.0,
        sigma: 1.0,
    };
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats::IDENTITY
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<Series>,
    pub labels: Vec<LabelVec>,
    pub class_names: Vec<String>,
    pub stats: NormStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n_records: usize,
    n_timesteps: usize,
    n_channels: usize,
    classes: Vec<String>,
    mu: f64,
    sigma: f64,
}

impl Dataset {
    pub fn new(
        records: Vec<Series>,
        labels: Vec<LabelVec>,
        class_names: Vec<String>,
        stats: NormStats,
    ) -> Result<Self> {
        if records.len() != labels.len() {
            return Err(CfxError::Shape {
                expected: format!("{} label rows", records.len()),
                got: format!("{} label rows", labels.len()),
            });
        }
        if class_names.len() < 2 {
            return Err(CfxError::InvalidArgument(
                "a dataset needs at least two classes".into(),
            ));
        }
        if let Some(first) = records.first() {
            for r in &records[1..] {
                first.check_same_shape(r)?;
            }
        }
        if let Some(l) = labels.iter().find(|l| l.len() != class_names.len()) {
            return Err(CfxError::Shape {
                expected: format!("{} label bits", class_names.len()),
                got: format!("{} label bits", l.len()),
            });
        }
        Ok(Dataset {
            records,
            labels,
            class_names,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(T, C)` of every record, `None` for an empty dataset.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.records.first().map(Series::shape)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn find_record(&self, record_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.record_id() == record_id)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            class_names: self.class_names.clone(),
            stats: self.stats,
        }
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        load_dataset(dir)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_dataset(self, dir)
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(CfxError::MissingFile(dir.to_path_buf()));
    }
    let manifest: Manifest = read_json(&dir.join("manifest.json"), "manifest.json")?;
    let (n, t, c) = (
        manifest.n_records,
        manifest.n_timesteps,
        manifest.n_channels,
    );
    let raw = read_f32_file(&dir.join("signals.f32"), n * t * c)?;
    let labels_path = dir.join("labels.csv");
    if !labels_path.exists() {
        return Err(CfxError::MissingFile(labels_path));
    }

    let class_lookup: HashMap<&str, usize> = manifest
        .classes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(&labels_path)
        .map_err(|e| CfxError::format("labels.csv", e))?;
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for row in reader.records() {
        let row = row.map_err(|e| CfxError::format("labels.csv", e))?;
        if row.len() != 2 {
            return Err(CfxError::format(
                "labels.csv",
                format!("expected 2 fields, found {}", row.len()),
            ));
        }
        let mut bits = vec![false; manifest.classes.len()];
        for name in row[1].split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let idx = class_lookup
                .get(name)
                .ok_or_else(|| CfxError::UnknownClass(name.to_string()))?;
            bits[*idx] = true;
        }
        ids.push(row[0].to_string());
        labels.push(LabelVec(bits));
    }
    if ids.len() != n {
        return Err(CfxError::format(
            "labels.csv",
            format!("{} rows for {} records", ids.len(), n),
        ));
    }

    let stride = t * c;
    let records = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| Series::new(id, t, c, raw[i * stride..(i + 1) * stride].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        records,
        labels,
        manifest.classes,
        NormStats {
            mu: manifest.mu,
            sigma: manifest.sigma,
        },
    )
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CfxError::io(dir, e))?;
    let (t, c) = dataset.shape().unwrap_or((0, 0));
    let manifest = Manifest {
        n_records: dataset.len(),
        n_timesteps: t,
        n_channels: c,
        classes: dataset.class_names.clone(),
        mu: dataset.stats.mu,
        sigma: dataset.stats.sigma,
    };
    write_json_atomic(&dir.join("manifest.json"), &manifest)?;

    let mut signals = Vec::with_capacity(dataset.len() * t * c * 4);
    for r in &dataset.records {
        signals.extend_from_slice(&f32_to_le_bytes(r.values()));
    }
    write_atomic(&dir.join("signals.f32"), &signals)?;

    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for (r, l) in dataset.records.iter().zip(&dataset.labels) {
        let names = l.names(&dataset.class_names).join(";");
        writer
            .write_record([r.record_id(), names.as_str()])
            .map_err(|e| CfxError::format("labels.csv", e))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CfxError::format("labels.csv", e.to_string()))?;
    write_atomic(&dir.join("labels.csv"), &bytes)
}

/// Mean and population standard deviation over every sample of every record.
pub fn zscore_stats(dataset: &Dataset) -> Result<NormStats> {
    let n: usize = dataset.records.iter().map(Series::len).sum();
    if n == 0 {
        return Err(CfxError::Empty("dataset"));
    }
    let all = || dataset.records.iter().flat_map(|r| r.values().iter());
    let mu = all().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let var = all()
        .map(|&v| {
            let d = f64::from(v) - mu;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    Ok(NormStats {
        mu,
        sigma: var.sqrt(),
    })
}

/// `(x - mu) / (sigma + 1e-7)`, elementwise.
pub fn normalize(series: &Series, stats: NormStats) -> Series {
    let denom = stats.sigma + NORM_EPS;
    let values = series
        .values()
        .iter()
        .map(|&v| ((f64::from(v) - stats.mu) / denom) as f32)
        .collect();
    Series {
        values,
        ..series.clone()
    }
}

/// Inverse of [`normalize`].
pub fn denormalize(series: &Series, stats: NormStats) -> Series {
    let scale = stats.sigma + NORM_EPS;
    let values = series
        .values()
        .iter()
        .map(|&v| (f64::from(v) * scale + stats.mu) as f32)
        .collect();
    Series {
        values,
        ..series.clone()
    }
}

/// Normalizes every record and stores `stats` as the dataset's constants.
pub fn normalize_dataset(dataset: &Dataset, stats: NormStats) -> Dataset {
    Dataset {
        records: dataset
            .records
            .iter()
            .map(|r| normalize(r, stats))
            .collect(),
        labels: dataset.labels.clone(),
        class_names: dataset.class_names.clone(),
        stats,
    }
}

/// Displaces samples by `tau` steps along time; positive `tau` delays the
/// signal. Vacated samples repeat the nearest edge value.
pub fn shift_series(series: &Series, tau: i64) -> Result<Series> {
    let t_len = series.n_timesteps() as i64;
    if tau.abs() >= t_len {
        return Err(CfxError::InvalidArgument(format!(
            "shift {tau} out of range for T={t_len}"
        )));
    }
    let c = series.n_channels();
    let mut values = Vec::with_capacity(series.len());
    for t in 0..t_len {
        let src = (t - tau).clamp(0, t_len - 1) as usize;
        values.extend_from_slice(&series.values()[src * c..(src + 1) * c]);
    }
    Ok(Series {
        values,
        ..series.clone()
    })
}
