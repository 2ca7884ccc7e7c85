//! Offline prototype mining: DTW distances, MDS embedding, silhouette-guided
//! k-means and medoid selection.

pub mod cluster;
pub mod db;
pub mod dtw;
pub mod mds;
pub mod mine;

pub use cluster::{
    kmeans, medoid, medoid_index, select_structure, silhouette, ClusterAssignment, KMeansConfig,
    Structure, StructureConfig,
};
pub use db::{ClassSummary, PrototypeDB, PrototypeEntry};
pub use dtw::{distance_matrix, dtw, dtw_distance, Band, DistanceMatrix};
pub use mds::{mds_embed, Embedding, MdsConfig, MdsInit};
pub use mine::{filter_samples, mine_prototypes, MiningConfig};
