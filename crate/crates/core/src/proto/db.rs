//! Prototype database and its on-disk layout: `prototypes.json` plus
//! `proto_signals.f32` holding the entry series in entry order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mine::MiningConfig;
use crate::data::Series;
use crate::error::{CfxError, Result};
use crate::io::{f32_to_le_bytes, read_f32_file, read_json, write_atomic, write_json_atomic};

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeEntry {
    pub class_index: usize,
    pub cluster_index: usize,
    pub record_id: String,
    pub series: Series,
    /// Mean DTW distance from the prototype to the rest of its cluster.
    pub mean_intra_dtw: f64,
    pub cluster_size: usize,
}

/// How a class was mined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    /// Records that passed filtering.
    pub n_candidates: usize,
    pub n_prototypes: usize,
    pub dims: Option<usize>,
    pub k: Option<usize>,
    pub silhouette: Option<f64>,
    pub final_stress: Option<f64>,
    pub k_truncated: bool,
    /// Fewer than three candidates: they were stored directly.
    pub passthrough: bool,
    /// No candidates survived filtering.
    pub omitted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeDB {
    pub class_names: Vec<String>,
    pub shape: (usize, usize),
    pub entries: Vec<PrototypeEntry>,
    pub classes: Vec<ClassSummary>,
    pub config: MiningConfig,
    pub version: String,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    class_index: usize,
    class: String,
    cluster: usize,
    record_id: String,
    mean_intra_dtw: f64,
    cluster_size: usize,
}

#[derive(Serialize, Deserialize)]
struct DbFile {
    version: String,
    classes: Vec<String>,
    n_timesteps: usize,
    n_channels: usize,
    config: MiningConfig,
    summary: Vec<ClassSummary>,
    entries: Vec<EntryFile>,
}

impl PrototypeDB {
    pub fn for_class(&self, class_index: usize) -> impl Iterator<Item = &PrototypeEntry> {
        self.entries
            .iter()
            .filter(move |e| e.class_index == class_index)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CfxError::io(dir, e))?;
        let file = DbFile {
            version: self.version.clone(),
            classes: self.class_names.clone(),
            n_timesteps: self.shape.0,
            n_channels: self.shape.1,
            config: self.config.clone(),
            summary: self.classes.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    class_index: e.class_index,
                    class: self.class_names[e.class_index].clone(),
                    cluster: e.cluster_index,
                    record_id: e.record_id.clone(),
                    mean_intra_dtw: e.mean_intra_dtw,
                    cluster_size: e.cluster_size,
                })
                .collect(),
        };
        let mut signals = Vec::new();
        for e in &self.entries {
            signals.extend_from_slice(&f32_to_le_bytes(e.series.values()));
        }
        write_atomic(&dir.join("proto_signals.f32"), &signals)?;
        write_json_atomic(&dir.join("prototypes.json"), &file)
    }

    pub fn load(dir: &Path) -> Result<PrototypeDB> {
        if !dir.is_dir() {
            return Err(CfxError::MissingFile(dir.to_path_buf()));
        }
        let file: DbFile = read_json(&dir.join("prototypes.json"), "prototypes.json")?;
        let (t, c) = (file.n_timesteps, file.n_channels);
        let raw = read_f32_file(&dir.join("proto_signals.f32"), file.entries.len() * t * c)?;
        let stride = t * c;
        let mut entries = Vec::with_capacity(file.entries.len());
        for (i, e) in file.entries.into_iter().enumerate() {
            if e.class_index >= file.classes.len() || file.classes[e.class_index] != e.class {
                return Err(CfxError::format(
                    "prototypes.json",
                    format!("entry {i} has inconsistent class '{}'", e.class),
                ));
            }
            entries.push(PrototypeEntry {
                class_index: e.class_index,
                cluster_index: e.cluster,
                series: Series::new(
                    e.record_id.clone(),
                    t,
                    c,
                    raw[i * stride..(i + 1) * stride].to_vec(),
                )?,
                record_id: e.record_id,
                mean_intra_dtw: e.mean_intra_dtw,
                cluster_size: e.cluster_size,
            });
        }
        Ok(PrototypeDB {
            class_names: file.classes,
            shape: (t, c),
            entries,
            classes: file.summary,
            config: file.config,
            version: file.version,
        })
    }
}
