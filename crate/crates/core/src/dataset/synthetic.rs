//! Seeded two-modality datasets with basic and compound classes.
//!
//! Basic classes are separated in modality A and share the origin in
//! modality B. Each compound class sits at the midpoint of its two basic
//! parents in modality A, so it overlaps them there, but gets its own
//! well-separated mean in modality B. Fusing both modalities therefore
//! separates every class while neither modality does on its own.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::TaskSpec;
use super::table::{FeatureRow, FeatureTable, Split};
use crate::error::{Error, Result};

/// Modality A plays the role of the high-level deep features.
pub const MODALITY_A: &str = "deep";
/// Modality B plays the role of the action-unit features.
pub const MODALITY_B: &str = "au";

/// Half-width of the hypercube basic-class means are drawn from.
const BASIC_HALF_WIDTH: f64 = 5.0;
/// Target spacing of compound means in modality B, in units of `cluster_spread`.
const COMPOUND_SEPARATION: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_basic_classes: usize,
    pub n_compound_classes: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub samples_per_class_train: usize,
    pub samples_per_class_test: usize,
    pub cluster_spread: f64,
    pub modality_bias: f64,
    /// Compound classes per incremental task.
    pub compounds_per_task: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_basic_classes: 4,
            n_compound_classes: 4,
            dim_a: 4,
            dim_b: 4,
            samples_per_class_train: 40,
            samples_per_class_test: 20,
            cluster_spread: 1.0,
            modality_bias: 1.0,
            compounds_per_task: 3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_basic_classes", self.n_basic_classes),
            ("dim_a", self.dim_a),
            ("dim_b", self.dim_b),
            ("samples_per_class_train", self.samples_per_class_train),
            ("samples_per_class_test", self.samples_per_class_test),
            ("compounds_per_task", self.compounds_per_task),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread > 0.0) {
            return Err(Error::Config("cluster_spread must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.modality_bias) {
            return Err(Error::Config("modality_bias must lie in [0, 1]".into()));
        }
        let pairs = self.n_basic_classes * (self.n_basic_classes.saturating_sub(1)) / 2;
        if self.n_compound_classes > pairs {
            return Err(Error::Config(format!(
                "too many compound classes: {} requested but {} basic classes give only {pairs} parent pairs",
                self.n_compound_classes, self.n_basic_classes
            )));
        }
        Ok(())
    }
}

pub fn basic_label(i: usize) -> String {
    format!("basic_{i}")
}

pub fn compound_label(first: usize, second: usize) -> String {
    format!("compound_{first}_{second}")
}

struct ClassPlan {
    label: String,
    mean_a: Vec<f64>,
    mean_b: Vec<f64>,
}

/// Generate modality tables A and B plus the task grouping: all basic
/// classes in the first task, compounds in later tasks of
/// `compounds_per_task` classes, grouped by first parent.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(FeatureTable, FeatureTable, Vec<TaskSpec>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let basic_means: Vec<Vec<f64>> = (0..config.n_basic_classes)
        .map(|_| {
            (0..config.dim_a)
                .map(|_| rng.random_range(-BASIC_HALF_WIDTH..=BASIC_HALF_WIDTH))
                .collect()
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..config.n_basic_classes)
        .flat_map(|i| ((i + 1)..config.n_basic_classes).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    let mut chosen: Vec<(usize, usize)> = pairs.into_iter().take(config.n_compound_classes).collect();
    chosen.sort_unstable();

    let b_means = separated_means(&mut rng, config.n_compound_classes, config.dim_b, config.cluster_spread);

    let mut plans: Vec<ClassPlan> = basic_means
        .iter()
        .enumerate()
        .map(|(i, m)| ClassPlan {
            label: basic_label(i),
            mean_a: m.clone(),
            mean_b: vec![0.0; config.dim_b],
        })
        .collect();
    for (&(p, q), mb) in chosen.iter().zip(&b_means) {
        plans.push(ClassPlan {
            label: compound_label(p, q),
            mean_a: basic_means[p]
                .iter()
                .zip(&basic_means[q])
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
            mean_b: mb.iter().map(|v| v * config.modality_bias).collect(),
        });
    }

    let noise = Normal::new(0.0, config.cluster_spread)
        .map_err(|e| Error::Config(format!("cluster_spread: {e}")))?;
    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    for plan in &plans {
        for (split, count) in [
            (Split::Train, config.samples_per_class_train),
            (Split::Test, config.samples_per_class_test),
        ] {
            for i in 0..count {
                let sample_id = format!("{}-{split}-{i:04}", plan.label);
                let va: Vec<f64> = plan.mean_a.iter().map(|m| m + noise.sample(&mut rng)).collect();
                let vb: Vec<f64> = plan.mean_b.iter().map(|m| m + noise.sample(&mut rng)).collect();
                rows_a.push(FeatureRow {
                    sample_id: sample_id.clone(),
                    class_label: plan.label.clone(),
                    split,
                    vector: va,
                });
                rows_b.push(FeatureRow {
                    sample_id,
                    class_label: plan.label.clone(),
                    split,
                    vector: vb,
                });
            }
        }
    }

    let mut tasks = vec![TaskSpec {
        name: "basic".into(),
        class_labels: (0..config.n_basic_classes).map(basic_label).collect(),
    }];
    for (k, chunk) in chosen.chunks(config.compounds_per_task).enumerate() {
        tasks.push(TaskSpec {
            name: format!("compound_{}", k + 1),
            class_labels: chunk.iter().map(|&(p, q)| compound_label(p, q)).collect(),
        });
    }

    Ok((
        FeatureTable::new(MODALITY_A, config.dim_a, rows_a)?,
        FeatureTable::new(MODALITY_B, config.dim_b, rows_b)?,
        tasks,
    ))
}

/// `count` random means, pairwise and from the origin at least
/// `COMPOUND_SEPARATION * spread` apart where the room allows. The cube grows
/// with `count` and the separation relaxes slowly after repeated rejections.
fn separated_means(rng: &mut ChaCha8Rng, count: usize, dim: usize, spread: f64) -> Vec<Vec<f64>> {
    let mut separation = COMPOUND_SEPARATION * spread;
    let per_axis = ((count + 1) as f64).powf(1.0 / dim as f64).ceil();
    let half_width = separation * per_axis;
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut failures = 0usize;
    while accepted.len() < count {
        let candidate: Vec<f64> = (0..dim).map(|_| rng.random_range(-half_width..=half_width)).collect();
        let clear = |other: &[f64]| {
            candidate
                .iter()
                .zip(other)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= separation
        };
        if clear(&vec![0.0; dim]) && accepted.iter().all(|m| clear(m)) {
            accepted.push(candidate);
            failures = 0;
        } else {
            failures += 1;
            if failures % 200 == 0 {
                separation *= 0.95;
            }
        }
    }
    accepted
}
