use std::collections::HashMap;

use super::manifest::ExperimentManifest;
use super::table::{FeatureTable, Split};
use crate::error::{Error, Result};

/// One labelled sample with a vector per modality, in manifest modality order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub class_label: String,
    pub features: Vec<Vec<f64>>,
}

/// The training and test data of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    /// 1-based position in the task sequence.
    pub task_index: usize,
    pub name: String,
    /// Classes owned by this task, in declared order.
    pub class_labels: Vec<String>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskBatch {
    pub fn owns(&self, class_label: &str) -> bool {
        self.class_labels.iter().any(|c| c == class_label)
    }

    /// Concatenate batches into one, keeping their order.
    pub fn union<'a>(
        task_index: usize,
        name: impl Into<String>,
        batches: impl IntoIterator<Item = &'a TaskBatch>,
    ) -> TaskBatch {
        let mut out = TaskBatch {
            task_index,
            name: name.into(),
            class_labels: Vec::new(),
            train: Vec::new(),
            test: Vec::new(),
        };
        for b in batches {
            out.class_labels.extend(b.class_labels.iter().cloned());
            out.train.extend(b.train.iter().cloned());
            out.test.extend(b.test.iter().cloned());
        }
        out
    }
}

/// Join the modality tables on `sample_id` and route every sample to the
/// task owning its class.
///
/// `tables` are matched to the manifest's modalities by name. Row order of
/// the first modality's table is preserved inside each batch.
pub fn build_task_sequence(
    manifest: &ExperimentManifest,
    tables: &[FeatureTable],
) -> Result<Vec<TaskBatch>> {
    let ordered: Vec<&FeatureTable> = manifest
        .modalities
        .iter()
        .map(|spec| {
            let table = tables
                .iter()
                .find(|t| t.modality_name() == spec.name)
                .ok_or_else(|| Error::Validation(format!("no feature table for modality {:?}", spec.name)))?;
            if table.dim() != spec.dim {
                return Err(Error::Validation(format!(
                    "modality {:?}: table has dim {}, manifest declares {}",
                    spec.name,
                    table.dim(),
                    spec.dim
                )));
            }
            Ok(table)
        })
        .collect::<Result<_>>()?;

    let reference = ordered[0];
    let indexes: Vec<HashMap<&str, usize>> = ordered[1..]
        .iter()
        .map(|t| {
            t.rows()
                .iter()
                .enumerate()
                .map(|(i, r)| (r.sample_id.as_str(), i))
                .collect()
        })
        .collect();
    for (t, _) in ordered[1..].iter().zip(&indexes) {
        if t.len() != reference.len() {
            return Err(Error::Alignment(format!(
                "modality {:?} has {} samples but {:?} has {}",
                t.modality_name(),
                t.len(),
                reference.modality_name(),
                reference.len()
            )));
        }
    }

    let owner: HashMap<&str, usize> = manifest
        .tasks
        .iter()
        .enumerate()
        .flat_map(|(k, t)| t.class_labels.iter().map(move |c| (c.as_str(), k)))
        .collect();

    let mut batches: Vec<TaskBatch> = manifest
        .tasks
        .iter()
        .enumerate()
        .map(|(k, t)| TaskBatch {
            task_index: k + 1,
            name: t.name.clone(),
            class_labels: t.class_labels.clone(),
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();

    for row in reference.rows() {
        let mut features = Vec::with_capacity(ordered.len());
        features.push(row.vector.clone());
        for (table, index) in ordered[1..].iter().zip(&indexes) {
            let other = index
                .get(row.sample_id.as_str())
                .map(|&i| &table.rows()[i])
                .ok_or_else(|| {
                    Error::Alignment(format!(
                        "sample {:?} is missing from modality {:?}",
                        row.sample_id,
                        table.modality_name()
                    ))
                })?;
            if other.class_label != row.class_label || other.split != row.split {
                return Err(Error::Alignment(format!(
                    "sample {:?} disagrees across modalities: ({}, {}) in {:?} vs ({}, {}) in {:?}",
                    row.sample_id,
                    row.class_label,
                    row.split,
                    reference.modality_name(),
                    other.class_label,
                    other.split,
                    table.modality_name()
                )));
            }
            features.push(other.vector.clone());
        }
        let k = *owner
            .get(row.class_label.as_str())
            .ok_or_else(|| Error::Routing(row.class_label.clone()))?;
        let sample = Sample {
            sample_id: row.sample_id.clone(),
            class_label: row.class_label.clone(),
            features,
        };
        match row.split {
            Split::Train => batches[k].train.push(sample),
            Split::Test => batches[k].test.push(sample),
        }
    }
    Ok(batches)
}
