//! Query-time counterfactual generation.

pub mod align;
pub mod explain;
pub mod rpeaks;
pub mod sparsify;

pub use align::{align_prototype, normalize_peak_count, Alignment, AlignmentInfo, PeakMatch};
pub use explain::{
    explain, retrieve_prototype, select_target_class, CounterfactualResult, ExplainOptions,
    Variant, VariantKind, RESULT_FILE, SIGNALS_FILE,
};
pub use rpeaks::{detect_rpeaks, detect_rpeaks_auto, PeakConfig, RPeaks};
pub use sparsify::{
    clean_segments, importance_scores, sparsify, sparsify_best_effort, Mask, SparseOutcome,
    SparsifyConfig,
};
