//! Experiment manifests, per-modality feature tables, task routing and
//! synthetic data.

mod manifest;
mod synthetic;
mod table;
mod tasks;

pub use manifest::{
    load_manifest, parse_manifest, ExperimentManifest, FusionConfig, FusionStrategy, ModalitySpec,
    TaskSpec, DEFAULT_SEEDS,
};
pub use synthetic::{
    basic_label, compound_label, generate_synthetic, SyntheticConfig, MODALITY_A, MODALITY_B,
};
pub use table::{load_feature_table, read_feature_table, FeatureRow, FeatureTable, Split};
pub use tasks::{build_task_sequence, Sample, TaskBatch};

use crate::error::Result;

/// Load every modality table a manifest declares, named after its modality.
pub fn load_tables(manifest: &ExperimentManifest) -> Result<Vec<FeatureTable>> {
    manifest
        .modalities
        .iter()
        .map(|m| load_feature_table(&manifest.resolve(&m.path), m.dim).map(|t| t.renamed(&m.name)))
        .collect()
}
