//! The offline mining pipeline: filter, DTW matrix, structure selection,
//! medoids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::{
    mean_distance_to, medoid_index, select_structure, KMeansConfig, StructureConfig,
};
use super::db::{ClassSummary, PrototypeDB, PrototypeEntry};
use super::dtw::{distance_matrix, Band};
use super::mds::{MdsConfig, MdsInit};
use crate::classifier::Model;
use crate::data::Dataset;
use crate::error::{CfxError, Result};
use crate::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub band: Band,
    pub dims: Vec<usize>,
    pub k: Vec<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub mds_max_iter: usize,
    pub mds_rel_tol: f64,
    pub mds_init: MdsInit,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            band: Band::Auto,
            dims: (2..=8).collect(),
            k: (2..=10).collect(),
            kmeans_restarts: 20,
            kmeans_max_iter: 300,
            mds_max_iter: 300,
            mds_rel_tol: 1e-6,
            mds_init: MdsInit::Classical,
            seed: 0,
        }
    }
}

impl MiningConfig {
    fn structure(&self, class_index: usize) -> StructureConfig {
        let seed = mix_seed(self.seed, &[class_index as u64]);
        StructureConfig {
            dims: self.dims.clone(),
            k: self.k.clone(),
            mds: MdsConfig {
                max_iter: self.mds_max_iter,
                rel_tol: self.mds_rel_tol,
                init: self.mds_init,
                seed,
            },
            kmeans: KMeansConfig {
                restarts: self.kmeans_restarts,
                max_iter: self.kmeans_max_iter,
                seed,
            },
        }
    }
}

/// Per-class record indices: single-label records whose thresholded
/// prediction reproduces their label vector exactly.
pub fn filter_samples(dataset: &Dataset, model: &Model) -> Result<Vec<Vec<usize>>> {
    if model.n_classes() != dataset.n_classes() {
        return Err(CfxError::Shape {
            expected: format!("{} model classes", dataset.n_classes()),
            got: format!("{} model classes", model.n_classes()),
        });
    }
    let kept = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let label = &dataset.labels[i];
            let Some(class) = label.single_class() else {
                return Ok(None);
            };
            let predicted = model.predict_labels(&dataset.records[i])?;
            Ok((predicted == *label).then_some((class, i)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pools = vec![Vec::new(); dataset.n_classes()];
    for (class, i) in kept.into_iter().flatten() {
        pools[class].push(i);
    }
    for (c, pool) in pools.iter().enumerate() {
        if pool.is_empty() {
            log::warn!(
                "class {} has no correctly classified single-label records",
                dataset.class_names[c]
            );
        }
    }
    Ok(pools)
}

/// Builds the prototype database for every class with surviving records.
pub fn mine_prototypes(
    dataset: &Dataset,
    model: &Model,
    config: &MiningConfig,
) -> Result<PrototypeDB> {
    let shape = dataset.shape().ok_or(CfxError::Empty("dataset"))?;
    let band = config.band.resolve(shape.0);
    let pools = filter_samples(dataset, model)?;

    let mut entries = Vec::new();
    let mut classes = Vec::new();
    for (class_index, pool) in pools.iter().enumerate() {
        let class = dataset.class_names[class_index].clone();
        let mut summary = ClassSummary {
            class: class.clone(),
            n_candidates: pool.len(),
            n_prototypes: 0,
            dims: None,
            k: None,
            silhouette: None,
            final_stress: None,
            k_truncated: false,
            passthrough: false,
            omitted: pool.is_empty(),
        };
        if pool.len() < 3 {
            if !pool.is_empty() {
                log::warn!(
                    "class {class}: only {} candidates, stored directly",
                    pool.len()
                );
                summary.passthrough = true;
            }
            for (cluster_index, &i) in pool.iter().enumerate() {
                entries.push(PrototypeEntry {
                    class_index,
                    cluster_index,
                    record_id: dataset.records[i].record_id().to_string(),
                    series: dataset.records[i].clone(),
                    mean_intra_dtw: 0.0,
                    cluster_size: 1,
                });
            }
            summary.n_prototypes = pool.len();
            classes.push(summary);
            continue;
        }

        let records: Vec<_> = pool.iter().map(|&i| dataset.records[i].clone()).collect();
        let matrix = distance_matrix(&records, band)?;
        let structure = select_structure(&matrix, &config.structure(class_index))?;
        log::info!(
            "class {class}: {} candidates, dims {} k {} silhouette {:.4}",
            pool.len(),
            structure.dims,
            structure.k,
            structure.silhouette
        );
        for cluster_index in 0..structure.k {
            let members = structure.assignment.members(cluster_index);
            let m = medoid_index(&members, &matrix)?;
            entries.push(PrototypeEntry {
                class_index,
                cluster_index,
                record_id: records[m].record_id().to_string(),
                series: records[m].clone(),
                mean_intra_dtw: mean_distance_to(m, &members, &matrix),
                cluster_size: members.len(),
            });
        }
        summary.n_prototypes = structure.k;
        summary.dims = Some(structure.dims);
        summary.k = Some(structure.k);
        summary.silhouette = Some(structure.silhouette);
        summary.final_stress = Some(structure.embedding.stress());
        summary.k_truncated = structure.k_truncated;
        classes.push(summary);
    }

    if entries.is_empty() {
        return Err(CfxError::InvalidArgument(
            "no class has correctly classified single-label records".into(),
        ));
    }
    Ok(PrototypeDB {
        class_names: dataset.class_names.clone(),
        shape,
        entries,
        classes,
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}
