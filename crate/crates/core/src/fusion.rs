//! Min-max normalisation of selected modalities and concatenation into one
//! fused vector.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{ModalitySpec, TaskBatch};
use crate::error::{Error, Result};

/// Per-dimension min/max scaler into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxNormalizer {
    pub per_dim_min: Vec<f64>,
    pub per_dim_max: Vec<f64>,
    /// Task whose training data supplied the extremes.
    pub fitted_on: String,
}

impl MinMaxNormalizer {
    pub fn dim(&self) -> usize {
        self.per_dim_min.len()
    }
}

/// Componentwise min and max of `vectors`.
pub fn fit_normalizer<T: AsRef<[f64]>>(vectors: &[T], task_name: &str) -> Result<MinMaxNormalizer> {
    let first = vectors
        .first()
        .ok_or(Error::Empty("cannot fit a normaliser to zero vectors"))?
        .as_ref();
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for v in vectors {
        let v = v.as_ref();
        if v.len() != lo.len() {
            return Err(Error::Dimension { expected: lo.len(), found: v.len() });
        }
        for ((l, h), x) in lo.iter_mut().zip(hi.iter_mut()).zip(v) {
            *l = l.min(*x);
            *h = h.max(*x);
        }
    }
    Ok(MinMaxNormalizer {
        per_dim_min: lo,
        per_dim_max: hi,
        fitted_on: task_name.to_string(),
    })
}

/// `clamp((v - min) / (max - min), 0, 1)`, with zero-range dimensions mapped to 0.
pub fn apply_normalizer(norm: &MinMaxNormalizer, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != norm.dim() {
        return Err(Error::Dimension { expected: norm.dim(), found: v.len() });
    }
    Ok(v.iter()
        .zip(&norm.per_dim_min)
        .zip(&norm.per_dim_max)
        .map(|((x, lo), hi)| {
            let range = hi - lo;
            if range > 0.0 {
                ((x - lo) / range).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub modality: String,
    pub offset: usize,
    pub length: usize,
}

/// Concatenated feature vector plus where each modality's segment lives.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    values: Vec<f64>,
    layout: Arc<[LayoutEntry]>,
}

impl FusedVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn segment(&self, modality: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|e| e.modality == modality)
            .map(|e| &self.values[e.offset..e.offset + e.length])
    }
}

impl AsRef<[f64]> for FusedVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

fn layout_for<'a>(parts: impl IntoIterator<Item = (&'a str, usize)>) -> Arc<[LayoutEntry]> {
    let mut offset = 0;
    parts
        .into_iter()
        .map(|(name, length)| {
            let e = LayoutEntry { modality: name.to_string(), offset, length };
            offset += length;
            e
        })
        .collect()
}

/// Concatenate segments in the given order.
pub fn fuse(segments: &[(&str, &[f64])]) -> FusedVector {
    FusedVector {
        values: segments.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
        layout: layout_for(segments.iter().map(|(n, v)| (*n, v.len()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySlot {
    pub name: String,
    pub dim: usize,
    pub normalizer: Option<MinMaxNormalizer>,
}

/// The frozen aggregation step: per-modality optional normalisation followed
/// by concatenation in manifest order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<ModalitySlot>", into = "Vec<ModalitySlot>")]
pub struct FusionPipeline {
    slots: Vec<ModalitySlot>,
    layout: Arc<[LayoutEntry]>,
}

impl PartialEq for FusionPipeline {
    fn eq(&self, other: &Self) -> bool {
        self.slots == other.slots
    }
}

impl From<Vec<ModalitySlot>> for FusionPipeline {
    fn from(slots: Vec<ModalitySlot>) -> Self {
        let layout = layout_for(slots.iter().map(|s| (s.name.as_str(), s.dim)));
        FusionPipeline { slots, layout }
    }
}

impl From<FusionPipeline> for Vec<ModalitySlot> {
    fn from(p: FusionPipeline) -> Self {
        p.slots
    }
}

impl FusionPipeline {
    /// Fit normalisers for the flagged modalities on `batch`'s training data.
    pub fn fit(modalities: &[ModalitySpec], batch: &TaskBatch) -> Result<FusionPipeline> {
        let slots = modalities
            .iter()
            .enumerate()
            .map(|(m, spec)| {
                let normalizer = if spec.normalize {
                    let vectors: Vec<&[f64]> =
                        batch.train.iter().map(|s| s.features[m].as_slice()).collect();
                    Some(fit_normalizer(&vectors, &batch.name)?)
                } else {
                    None
                };
                Ok(ModalitySlot { name: spec.name.clone(), dim: spec.dim, normalizer })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(slots.into())
    }

    pub fn slots(&self) -> &[ModalitySlot] {
        &self.slots
    }

    pub fn dim(&self) -> usize {
        self.slots.iter().map(|s| s.dim).sum()
    }

    /// Normalise and concatenate one sample's per-modality vectors.
    pub fn transform(&self, features: &[Vec<f64>]) -> Result<FusedVector> {
        if features.len() != self.slots.len() {
            return Err(Error::Validation(format!(
                "expected {} modalities, got {}",
                self.slots.len(),
                features.len()
            )));
        }
        let mut values = Vec::with_capacity(self.dim());
        for (slot, v) in self.slots.iter().zip(features) {
            if v.len() != slot.dim {
                return Err(Error::Dimension { expected: slot.dim, found: v.len() });
            }
            match &slot.normalizer {
                Some(n) => values.extend(apply_normalizer(n, v)?),
                None => values.extend_from_slice(v),
            }
        }
        Ok(FusedVector { values, layout: Arc::clone(&self.layout) })
    }
}
