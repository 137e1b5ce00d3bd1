#![allow(dead_code)]

use clbgmm::bgmm::BgmmConfig;
use clbgmm::dataset::{
    generate_synthetic, ExperimentManifest, FeatureTable, FusionConfig, ModalitySpec,
    SyntheticConfig,
};

/// In-memory manifest and tables for a synthetic dataset.
pub fn synthetic_experiment(
    config: &SyntheticConfig,
    data_seed: u64,
    bgmm: BgmmConfig,
) -> (ExperimentManifest, Vec<FeatureTable>) {
    let (a, b, tasks) = generate_synthetic(config, data_seed).unwrap();
    let modalities = [&a, &b]
        .iter()
        .map(|t| ModalitySpec {
            name: t.modality_name().to_string(),
            path: format!("{}.csv", t.modality_name()).into(),
            dim: t.dim(),
            normalize: false,
        })
        .collect();
    let manifest = ExperimentManifest {
        name: None,
        tasks,
        modalities,
        fusion: FusionConfig::default(),
        bgmm,
        seeds: vec![1, 2, 3, 4, 5],
        output: "results".into(),
        class_priors: false,
        joint_reference: true,
        base_dir: None,
    };
    manifest.validate().unwrap();
    (manifest, vec![a, b])
}

/// Seven basic and fifteen compound classes in six tasks.
pub fn six_task_config() -> SyntheticConfig {
    SyntheticConfig {
        n_basic_classes: 7,
        n_compound_classes: 15,
        compounds_per_task: 3,
        samples_per_class_train: 30,
        samples_per_class_test: 15,
        ..SyntheticConfig::default()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
