//! The class-incremental experiment: train task by task, evaluate on every
//! task seen so far, and aggregate over seeds.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_task_sequence, ExperimentManifest, FeatureTable, TaskBatch};
use crate::ensemble::{accuracy, ClassConditionalEnsemble, LabeledVector};
use crate::error::{Error, Result};
use crate::fusion::FusionPipeline;
use crate::metrics::MetricsReport;

/// Lower-triangular `a(k, j)` for `1 <= j <= k`, filled one row per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct AccuracyMatrix {
    task_names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawMatrix {
    task_names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<RawMatrix> for AccuracyMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        let mut m = AccuracyMatrix::new(raw.task_names);
        for row in raw.rows {
            m.push_row(row)?;
        }
        Ok(m)
    }
}

impl AccuracyMatrix {
    pub fn new(task_names: Vec<String>) -> Self {
        AccuracyMatrix { task_names, rows: Vec::new() }
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn task_count(&self) -> usize {
        self.task_names.len()
    }

    pub fn completed_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.task_names.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Append row `k = completed_rows() + 1`, which must hold `k` accuracies.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let k = self.rows.len() + 1;
        if k > self.task_names.len() {
            return Err(Error::Validation(format!(
                "accuracy matrix already has all {} rows",
                self.task_names.len()
            )));
        }
        if row.len() != k {
            return Err(Error::Validation(format!("row {k} must have {k} entries, got {}", row.len())));
        }
        if let Some(bad) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Validation(format!("accuracy {bad} in row {k} is outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn row(&self, k: usize) -> Result<&[f64]> {
        k.checked_sub(1)
            .and_then(|i| self.rows.get(i))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Validation(format!("row {k} is not defined")))
    }

    pub fn get(&self, k: usize, j: usize) -> Result<f64> {
        let row = self.row(k)?;
        if j == 0 || j > k {
            return Err(Error::Validation(format!("entry ({k}, {j}) is not defined")));
        }
        Ok(row[j - 1])
    }
}

/// Which model a training call belongs to, for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    Continual,
    JointReference,
}

/// Called with every batch right before it is handed to `train_task`.
pub type TrainingObserver<'a> = dyn FnMut(Learner, usize, &TaskBatch) + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub sample_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub config: ExperimentManifest,
    pub seed: u64,
    pub accuracy_matrix: AccuracyMatrix,
    pub test_sizes: Vec<usize>,
    /// Test samples of each task, in evaluation order.
    pub test_sets: Vec<Vec<TestRecord>>,
    /// `predictions[k-1][j-1][i]`: label predicted for test sample `i` of
    /// task `j` after training through task `k`.
    pub predictions: Vec<Vec<Vec<String>>>,
    /// `a*_k` for every `k`, when the manifest asks for it.
    pub joint_reference: Option<Vec<f64>>,
    /// Correct test predictions per class after the last task.
    pub per_class_correct: IndexMap<String, usize>,
    pub per_class_test: IndexMap<String, usize>,
    pub metrics: MetricsReport,
    pub normalizer: FusionPipeline,
    pub ensemble: ClassConditionalEnsemble,
}

impl RunResult {
    pub fn task_names(&self) -> &[String] {
        self.accuracy_matrix.task_names()
    }

    /// Predictions after the last task, flattened in `test_sets` order.
    pub fn final_predictions(&self) -> Vec<(&TestRecord, &str)> {
        let last = self.predictions.last().map(Vec::as_slice).unwrap_or_default();
        self.test_sets
            .iter()
            .zip(last)
            .flat_map(|(set, preds)| set.iter().zip(preds.iter().map(String::as_str)))
            .collect()
    }

    /// Structural checks for a result read back from disk.
    pub fn validate(&self) -> Result<()> {
        let t = self.accuracy_matrix.task_count();
        let bad = |msg: String| Err(Error::Validation(format!("malformed results: {msg}")));
        if t == 0 || !self.accuracy_matrix.is_complete() {
            return bad("accuracy matrix is incomplete".into());
        }
        if self.test_sizes.len() != t || self.test_sets.len() != t || self.predictions.len() != t {
            return bad(format!("expected {t} tasks in test sizes, test sets and predictions"));
        }
        for (j, set) in self.test_sets.iter().enumerate() {
            if set.len() != self.test_sizes[j] {
                return bad(format!("test set {} has {} samples, size says {}", j + 1, set.len(), self.test_sizes[j]));
            }
        }
        for (k, step) in self.predictions.iter().enumerate() {
            if step.len() != k + 1 || step.iter().zip(&self.test_sizes).any(|(p, &n)| p.len() != n) {
                return bad(format!("predictions after task {} have the wrong shape", k + 1));
            }
        }
        if let Some(refs) = &self.joint_reference {
            if refs.len() != t {
                return bad(format!("{} joint-reference values for {t} tasks", refs.len()));
            }
        }
        Ok(())
    }
}

/// Run every task in order with no instrumentation.
pub fn run_continual(manifest: &ExperimentManifest, tables: &[FeatureTable], seed: u64) -> Result<RunResult> {
    run_continual_observed(manifest, tables, seed, &mut |_, _, _| {})
}

/// [`run_continual`] reporting every training batch to `observer`.
///
/// Each task's training batch is moved into the learner and dropped once its
/// task is trained; only fused test sets are kept for evaluation.
pub fn run_continual_observed(
    manifest: &ExperimentManifest,
    tables: &[FeatureTable],
    seed: u64,
    observer: &mut TrainingObserver<'_>,
) -> Result<RunResult> {
    manifest.validate()?;
    let batches = build_task_sequence(manifest, tables)?;
    check_batches(&batches)?;
    let task_names = manifest.task_names();
    let pipeline = FusionPipeline::fit(&manifest.modalities, &batches[0])?;

    let mut ensemble =
        ClassConditionalEnsemble::new(pipeline.clone()).with_class_priors(manifest.class_priors);
    let mut test_sets: Vec<Vec<LabeledVector>> = Vec::with_capacity(batches.len());
    let mut matrix = AccuracyMatrix::new(task_names.clone());
    let mut predictions = Vec::with_capacity(batches.len());

    for mut batch in batches {
        let k = batch.task_index;
        let test = std::mem::take(&mut batch.test);
        test_sets.push(ensemble.fuse_labeled(&test)?);
        observer(Learner::Continual, k, &batch);
        ensemble = ensemble.train_task(&batch, &manifest.bgmm, seed)?;
        drop(batch);

        let mut row = Vec::with_capacity(k);
        let mut step = Vec::with_capacity(k);
        for set in &test_sets {
            let predicted = ensemble.predict_many(set)?;
            row.push(accuracy(&predicted, set));
            step.push(predicted);
        }
        matrix.push_row(row)?;
        predictions.push(step);
    }

    let joint_reference = if manifest.joint_reference {
        let refs = (1..=task_names.len())
            .map(|k| joint_reference_observed(manifest, tables, k, seed, observer))
            .collect::<Result<Vec<_>>>()?;
        Some(refs)
    } else {
        None
    };

    let mut per_class_correct: IndexMap<String, usize> =
        ensemble.class_labels().map(|c| (c.to_string(), 0)).collect();
    let mut per_class_test = per_class_correct.clone();
    let last = predictions.last().expect("at least one task");
    for (set, preds) in test_sets.iter().zip(last) {
        for (s, p) in set.iter().zip(preds) {
            *per_class_test.entry(s.label.clone()).or_default() += 1;
            if *p == s.label {
                *per_class_correct.entry(s.label.clone()).or_default() += 1;
            }
        }
    }

    let test_sizes: Vec<usize> = test_sets.iter().map(Vec::len).collect();
    let metrics = MetricsReport::compute(&matrix, &test_sizes, joint_reference.as_deref())?;
    Ok(RunResult {
        label: manifest.label(),
        config: manifest.clone(),
        seed,
        accuracy_matrix: matrix,
        test_sizes,
        test_sets: test_sets
            .iter()
            .map(|set| {
                set.iter()
                    .map(|s| TestRecord { sample_id: s.sample_id.clone(), label: s.label.clone() })
                    .collect()
            })
            .collect(),
        predictions,
        joint_reference,
        per_class_correct,
        per_class_test,
        metrics,
        normalizer: pipeline,
        ensemble,
    })
}

fn check_batches(batches: &[TaskBatch]) -> Result<()> {
    for b in batches {
        if b.test.is_empty() {
            return Err(Error::Validation(format!("task {:?} has no test samples", b.name)));
        }
    }
    Ok(())
}

/// `a*_k`: accuracy on task `k`'s test set of a fresh ensemble trained on the
/// union of the training data of tasks `1..=k`.
///
/// The fusion pipeline is fitted on task 1 and per-class seeds match the
/// continual run, so every per-class mixture equals its continual twin.
pub fn train_joint_reference(
    manifest: &ExperimentManifest,
    tables: &[FeatureTable],
    k: usize,
    seed: u64,
) -> Result<f64> {
    joint_reference_observed(manifest, tables, k, seed, &mut |_, _, _| {})
}

fn joint_reference_observed(
    manifest: &ExperimentManifest,
    tables: &[FeatureTable],
    k: usize,
    seed: u64,
    observer: &mut TrainingObserver<'_>,
) -> Result<f64> {
    let batches = build_task_sequence(manifest, tables)?;
    if k == 0 || k > batches.len() {
        return Err(Error::Validation(format!("task index {k} out of range 1..={}", batches.len())));
    }
    check_batches(&batches)?;
    let pipeline = FusionPipeline::fit(&manifest.modalities, &batches[0])?;
    let union = TaskBatch::union(k, format!("joint_1_to_{k}"), &batches[..k]);
    observer(Learner::JointReference, k, &union);
    let ensemble = ClassConditionalEnsemble::new(pipeline)
        .with_class_priors(manifest.class_priors)
        .train_task(&union, &manifest.bgmm, seed)?;
    let test = ensemble.fuse_labeled(&batches[k - 1].test)?;
    ensemble.evaluate(&test)
}

/// Fraction of samples that at least one of the two predictors gets right.
pub fn oracle_union_accuracy<S: AsRef<str>>(preds_a: &[S], preds_b: &[S], truth: &[S]) -> Result<f64> {
    if preds_a.len() != truth.len() || preds_b.len() != truth.len() {
        return Err(Error::Validation(format!(
            "prediction lengths {} and {} do not match {} labels",
            preds_a.len(),
            preds_b.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("oracle union needs at least one sample"));
    }
    let hits = truth
        .iter()
        .zip(preds_a.iter().zip(preds_b))
        .filter(|(t, (a, b))| a.as_ref() == t.as_ref() || b.as_ref() == t.as_ref())
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub label: String,
    pub seeds: Vec<u64>,
    pub task_names: Vec<String>,
    pub average_accuracy: Vec<MeanStd>,
    pub average_incremental_accuracy: Vec<MeanStd>,
    pub forgetting_measure: Vec<Option<MeanStd>>,
    pub intransigence: Vec<Option<MeanStd>>,
    /// `a(T, j)` for every task `j`.
    pub final_task_accuracy: Vec<MeanStd>,
    pub final_macro_accuracy: MeanStd,
    pub final_micro_accuracy: MeanStd,
}

impl AggregateResult {
    pub fn from_runs(runs: &[RunResult]) -> Result<AggregateResult> {
        let first = runs.first().ok_or(Error::Empty("no runs to aggregate"))?;
        let t = first.accuracy_matrix.task_count();
        if runs.iter().any(|r| r.accuracy_matrix.task_count() != t) {
            return Err(Error::Validation("runs disagree on the number of tasks".into()));
        }
        let over = |f: &dyn Fn(&RunResult) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        let over_opt = |f: &dyn Fn(&RunResult) -> Option<f64>| {
            runs.iter().map(f).collect::<Option<Vec<_>>>().map(|v| MeanStd::of(&v))
        };
        Ok(AggregateResult {
            label: first.label.clone(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            task_names: first.task_names().to_vec(),
            average_accuracy: (0..t).map(|k| over(&|r| r.metrics.average_accuracy[k])).collect(),
            average_incremental_accuracy: (0..t)
                .map(|k| over(&|r| r.metrics.average_incremental_accuracy[k]))
                .collect(),
            forgetting_measure: (0..t).map(|k| over_opt(&|r| r.metrics.forgetting_measure[k])).collect(),
            intransigence: (0..t).map(|k| over_opt(&|r| r.metrics.intransigence[k])).collect(),
            final_task_accuracy: (0..t)
                .map(|j| over(&|r| r.accuracy_matrix.rows()[t - 1][j]))
                .collect(),
            final_macro_accuracy: over(&|r| r.metrics.final_macro_accuracy),
            final_micro_accuracy: over(&|r| r.metrics.final_micro_accuracy),
        })
    }
}

/// One run per manifest seed, in parallel, plus their aggregate.
pub fn multi_seed(
    manifest: &ExperimentManifest,
    tables: &[FeatureTable],
) -> Result<(Vec<RunResult>, AggregateResult)> {
    manifest.validate()?;
    let runs = manifest
        .seeds
        .par_iter()
        .map(|&seed| run_continual(manifest, tables, seed))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = AggregateResult::from_runs(&runs)?;
    Ok((runs, aggregate))
}

pub fn run_file_name(seed: u64) -> String {
    format!("run_seed_{seed}.json")
}

pub const AGGREGATE_FILE: &str = "aggregate.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `run_seed_<s>.json` per run and `aggregate.json` into `dir`.
pub fn write_results(dir: &Path, runs: &[RunResult], aggregate: &AggregateResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(runs.len() + 1);
    for run in runs {
        let path = dir.join(run_file_name(run.seed));
        write_json(&path, run)?;
        written.push(path);
    }
    let path = dir.join(AGGREGATE_FILE);
    write_json(&path, aggregate)?;
    written.push(path);
    Ok(written)
}

/// Read and check a results file written by [`write_results`].
pub fn load_run(path: &Path) -> Result<RunResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: format!("{}: {e}", path.display()),
    })?;
    let run: RunResult = serde_json::from_value(value)
        .map_err(|e| Error::Validation(format!("malformed results {}: {e}", path.display())))?;
    run.validate()?;
    Ok(run)
}
