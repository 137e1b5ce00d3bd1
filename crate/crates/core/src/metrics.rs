//! Continual-learning metrics over an accuracy matrix.
//!
//! Indices are 1-based to match the usual notation: `a(k, j)` is the test
//! accuracy on task `j` after training through task `k`.

use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::AccuracyMatrix;

fn check_row(matrix: &AccuracyMatrix, k: usize) -> Result<()> {
    if k == 0 || k > matrix.completed_rows() {
        return Err(Error::Validation(format!(
            "task index {k} out of range 1..={}",
            matrix.completed_rows()
        )));
    }
    Ok(())
}

/// `AA_k`: mean of row `k`.
pub fn average_accuracy(matrix: &AccuracyMatrix, k: usize) -> Result<f64> {
    check_row(matrix, k)?;
    let row = matrix.row(k)?;
    Ok(row.iter().sum::<f64>() / k as f64)
}

/// `AIA_k`: mean of `AA_1..AA_k`.
pub fn average_incremental_accuracy(matrix: &AccuracyMatrix, k: usize) -> Result<f64> {
    check_row(matrix, k)?;
    let mut total = 0.0;
    for i in 1..=k {
        total += average_accuracy(matrix, i)?;
    }
    Ok(total / k as f64)
}

/// `f_{j,k}`: best earlier accuracy on task `j` minus the current one. The
/// max runs over rows `j..k-1`, the only rows where column `j` exists.
/// Not clamped, so improvement shows up as a negative value.
pub fn forgetting(matrix: &AccuracyMatrix, j: usize, k: usize) -> Result<f64> {
    if j == 0 || j >= k {
        return Err(Error::Validation(format!("forgetting needs 1 <= j < k, got j={j}, k={k}")));
    }
    check_row(matrix, k)?;
    let current = matrix.get(k, j)?;
    let mut best = f64::NEG_INFINITY;
    for i in j..k {
        best = best.max(matrix.get(i, j)?);
    }
    Ok(best - current)
}

/// `FM_k`: mean forgetting over the `k - 1` earlier tasks.
pub fn forgetting_measure(matrix: &AccuracyMatrix, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::Validation("forgetting measure is undefined at the first task".into()));
    }
    check_row(matrix, k)?;
    let mut total = 0.0;
    for j in 1..k {
        total += forgetting(matrix, j, k)?;
    }
    Ok(total / (k - 1) as f64)
}

/// `IM_k = a*_k - a_{k,k}`.
pub fn intransigence(a_star_k: f64, a_kk: f64) -> f64 {
    a_star_k - a_kk
}

/// `(merged - baseline) / baseline`.
pub fn relative_evolution(merged: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::Validation(format!(
            "relative evolution needs a positive baseline, got {baseline}"
        )));
    }
    Ok((merged - baseline) / baseline)
}

/// Unweighted and test-size-weighted means of the last row.
pub fn final_accuracies(matrix: &AccuracyMatrix, test_sizes: &[usize]) -> Result<(f64, f64)> {
    let t = matrix.completed_rows();
    if t == 0 {
        return Err(Error::Empty("accuracy matrix has no rows"));
    }
    let row = matrix.row(t)?;
    if row.len() != test_sizes.len() {
        return Err(Error::Validation(format!(
            "{} test sizes for a row of {} tasks",
            test_sizes.len(),
            row.len()
        )));
    }
    if test_sizes.contains(&0) {
        return Err(Error::Validation("test sizes must be positive".into()));
    }
    let macro_acc = row.iter().sum::<f64>() / t as f64;
    let n: usize = test_sizes.iter().sum();
    let micro = row
        .iter()
        .zip(test_sizes)
        .map(|(a, &s)| a * s as f64)
        .sum::<f64>()
        / n as f64;
    Ok((macro_acc, micro))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub average_accuracy: Vec<f64>,
    pub average_incremental_accuracy: Vec<f64>,
    /// `None` at the first task.
    pub forgetting_measure: Vec<Option<f64>>,
    /// `None` when no joint reference was trained.
    pub intransigence: Vec<Option<f64>>,
    pub final_macro_accuracy: f64,
    pub final_micro_accuracy: f64,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub relative_evolution: IndexMap<String, f64>,
}

impl MetricsReport {
    /// Every metric for a complete matrix. `joint_reference[k-1]` is `a*_k`.
    pub fn compute(
        matrix: &AccuracyMatrix,
        test_sizes: &[usize],
        joint_reference: Option<&[f64]>,
    ) -> Result<MetricsReport> {
        let t = matrix.completed_rows();
        if t == 0 {
            return Err(Error::Empty("accuracy matrix has no rows"));
        }
        if let Some(refs) = joint_reference {
            if refs.len() != t {
                return Err(Error::Validation(format!(
                    "{} joint-reference accuracies for {t} tasks",
                    refs.len()
                )));
            }
        }
        let mut report = MetricsReport {
            average_accuracy: Vec::with_capacity(t),
            average_incremental_accuracy: Vec::with_capacity(t),
            forgetting_measure: Vec::with_capacity(t),
            intransigence: Vec::with_capacity(t),
            final_macro_accuracy: 0.0,
            final_micro_accuracy: 0.0,
            relative_evolution: IndexMap::new(),
        };
        for k in 1..=t {
            report.average_accuracy.push(average_accuracy(matrix, k)?);
            let aia = report.average_accuracy.iter().sum::<f64>() / k as f64;
            report.average_incremental_accuracy.push(aia);
            report
                .forgetting_measure
                .push(if k >= 2 { Some(forgetting_measure(matrix, k)?) } else { None });
            let im = match joint_reference {
                Some(refs) => Some(intransigence(refs[k - 1], matrix.get(k, k)?)),
                None => None,
            };
            report.intransigence.push(im);
        }
        (report.final_macro_accuracy, report.final_micro_accuracy) = final_accuracies(matrix, test_sizes)?;
        Ok(report)
    }

    pub fn task_count(&self) -> usize {
        self.average_accuracy.len()
    }

    /// CSV with header `k,AA,AIA,FM,IM`; undefined values are empty cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let fail = |e: csv::Error| Error::Validation(format!("writing metrics csv: {e}"));
        w.write_record(["k", "AA", "AIA", "FM", "IM"]).map_err(fail)?;
        for k in 0..self.task_count() {
            w.write_record([
                (k + 1).to_string(),
                self.average_accuracy[k].to_string(),
                self.average_incremental_accuracy[k].to_string(),
                optional(self.forgetting_measure[k]),
                optional(self.intransigence[k]),
            ])
            .map_err(fail)?;
        }
        w.flush().map_err(|e| Error::Validation(format!("writing metrics csv: {e}")))?;
        Ok(())
    }
}

pub(crate) fn optional(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
