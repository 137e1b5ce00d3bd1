//! One mixture per class; prediction is the class whose mixture gives the
//! highest log-likelihood.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bgmm::{self, BgmmConfig, FittedMixture};
use crate::dataset::{Sample, TaskBatch};
use crate::error::{Error, Result};
use crate::fusion::{FusedVector, FusionPipeline};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub class_label: String,
    /// Number of training samples the mixture was fitted on.
    pub train_count: usize,
    pub mixture: FittedMixture,
}

/// A fused test sample with its true label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub sample_id: String,
    pub label: String,
    pub fused: FusedVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConditionalEnsemble {
    fusion: FusionPipeline,
    /// First-seen order; also the tie-break order for prediction.
    models: Vec<ClassModel>,
    #[serde(default)]
    class_priors: bool,
}

impl ClassConditionalEnsemble {
    pub fn new(fusion: FusionPipeline) -> Self {
        ClassConditionalEnsemble { fusion, models: Vec::new(), class_priors: false }
    }

    /// Add `ln(n_c / N)` from training counts to every score.
    pub fn with_class_priors(mut self, enabled: bool) -> Self {
        self.class_priors = enabled;
        self
    }

    pub fn fusion(&self) -> &FusionPipeline {
        &self.fusion
    }

    pub fn models(&self) -> &[ClassModel] {
        &self.models
    }

    pub fn class_count(&self) -> usize {
        self.models.len()
    }

    pub fn class_labels(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(|m| m.class_label.as_str())
    }

    pub fn model(&self, class_label: &str) -> Option<&FittedMixture> {
        self.models
            .iter()
            .find(|m| m.class_label == class_label)
            .map(|m| &m.mixture)
    }

    pub fn fuse(&self, sample: &Sample) -> Result<FusedVector> {
        self.fusion.transform(&sample.features)
    }

    pub fn fuse_labeled(&self, samples: &[Sample]) -> Result<Vec<LabeledVector>> {
        samples
            .iter()
            .map(|s| {
                Ok(LabeledVector {
                    sample_id: s.sample_id.clone(),
                    label: s.class_label.clone(),
                    fused: self.fuse(s)?,
                })
            })
            .collect()
    }

    /// Fit a fresh mixture for each class in `batch` on exactly that class's
    /// fused training vectors and append it. Existing models are untouched.
    ///
    /// The mixture of class `c` is seeded with `seed::class_seed(seed, c)`.
    pub fn train_task(mut self, batch: &TaskBatch, config: &BgmmConfig, seed: u64) -> Result<Self> {
        for (i, class) in batch.class_labels.iter().enumerate() {
            if self.models.iter().any(|m| &m.class_label == class)
                || batch.class_labels[..i].contains(class)
            {
                return Err(Error::Validation(format!(
                    "class overlap: {class:?} is already trained; classes must be new in each task"
                )));
            }
        }

        let fused: Vec<(String, FusedVector)> = batch
            .train
            .iter()
            .map(|s| Ok((s.class_label.clone(), self.fuse(s)?)))
            .collect::<Result<_>>()?;

        let fitted: Vec<ClassModel> = batch
            .class_labels
            .par_iter()
            .map(|class| {
                let data: Vec<&[f64]> = fused
                    .iter()
                    .filter(|(label, _)| label == class)
                    .map(|(_, f)| f.values())
                    .collect();
                if data.is_empty() {
                    return Err(Error::Validation(format!(
                        "class {class:?} in task {:?} has no training samples",
                        batch.name
                    )));
                }
                let (mixture, _) = bgmm::fit(&data, config, seed::class_seed(seed, class))
                    .map_err(|e| e.with_context(format!("class {class:?} in task {:?}", batch.name)))?;
                Ok(ClassModel { class_label: class.clone(), train_count: data.len(), mixture })
            })
            .collect::<Result<_>>()?;

        self.models.extend(fitted);
        Ok(self)
    }

    fn log_priors(&self) -> Option<Vec<f64>> {
        if !self.class_priors {
            return None;
        }
        let total: usize = self.models.iter().map(|m| m.train_count).sum();
        Some(
            self.models
                .iter()
                .map(|m| (m.train_count as f64 / total as f64).ln())
                .collect(),
        )
    }

    /// Scores in model order.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.models.is_empty() {
            return Err(Error::Validation("no trained classes".into()));
        }
        let dim = self.fusion.dim();
        if x.len() != dim {
            return Err(Error::Dimension { expected: dim, found: x.len() });
        }
        let priors = self.log_priors();
        self.models
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let ll = m.mixture.log_likelihood(x)? + priors.as_ref().map_or(0.0, |p| p[k]);
                if ll.is_finite() {
                    Ok(ll)
                } else {
                    Err(Error::Numerical(format!(
                        "score of class {:?} is {ll}",
                        m.class_label
                    )))
                }
            })
            .collect()
    }

    /// Log-likelihood of `fused` under every known class, in first-seen order.
    pub fn predict_scores(&self, fused: &FusedVector) -> Result<IndexMap<String, f64>> {
        let scores = self.scores(fused.values())?;
        Ok(self
            .models
            .iter()
            .zip(scores)
            .map(|(m, s)| (m.class_label.clone(), s))
            .collect())
    }

    /// Index (in first-seen order) of the highest-scoring class; the earliest
    /// class wins exact ties.
    pub fn predict_index(&self, x: &[f64]) -> Result<usize> {
        let scores = self.scores(x)?;
        Ok(argmax_first(&scores))
    }

    pub fn predict(&self, fused: &FusedVector) -> Result<&str> {
        let k = self.predict_index(fused.values())?;
        Ok(&self.models[k].class_label)
    }

    /// Predicted labels for many samples, scored in parallel.
    pub fn predict_many(&self, samples: &[LabeledVector]) -> Result<Vec<String>> {
        samples
            .par_iter()
            .map(|s| self.predict(&s.fused).map(str::to_string))
            .collect()
    }

    /// Fraction of samples whose prediction equals their label.
    pub fn evaluate(&self, samples: &[LabeledVector]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("cannot evaluate on an empty sample set"));
        }
        let predictions = self.predict_many(samples)?;
        Ok(accuracy(&predictions, samples))
    }
}

pub(crate) fn accuracy(predictions: &[String], samples: &[LabeledVector]) -> f64 {
    let correct = predictions
        .iter()
        .zip(samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    correct as f64 / samples.len() as f64
}

fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}
