use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("split must be \"train\" or \"test\", got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub class_label: String,
    pub split: Split,
    pub vector: Vec<f64>,
}

/// One modality's feature vectors, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    modality_name: String,
    dim: usize,
    rows: Vec<FeatureRow>,
}

impl FeatureTable {
    /// Build a table, checking vector lengths and sample-id uniqueness.
    pub fn new(modality_name: impl Into<String>, dim: usize, rows: Vec<FeatureRow>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.vector.len() != dim {
                return Err(Error::Validation(format!(
                    "row {} ({}): expected {dim} features, found {}",
                    i + 1,
                    row.sample_id,
                    row.vector.len()
                )));
            }
            if !seen.insert(row.sample_id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample_id {:?}", row.sample_id)));
            }
        }
        Ok(FeatureTable {
            modality_name: modality_name.into(),
            dim,
            rows,
        })
    }

    pub fn modality_name(&self) -> &str {
        &self.modality_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn renamed(mut self, modality_name: impl Into<String>) -> Self {
        self.modality_name = modality_name.into();
        self
    }

    /// Write as `sample_id,class,split,f_0,...,f_{D-1}`. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::Validation(format!("writing feature table: {e}"));
        let mut header = vec!["sample_id".to_string(), "class".into(), "split".into()];
        header.extend((0..self.dim).map(|d| format!("f_{d}")));
        w.write_record(&header).map_err(to_err)?;
        for row in &self.rows {
            let mut record = vec![row.sample_id.clone(), row.class_label.clone(), row.split.to_string()];
            record.extend(row.vector.iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::Validation(format!("writing feature table: {e}")))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Load a feature CSV and check it against the expected dimension. The
/// modality is named after the file stem.
pub fn load_feature_table(path: &Path, expected_dim: usize) -> Result<FeatureTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_feature_table(file, &name, expected_dim, path)
}

/// Parse feature CSV text from any reader; `source` only labels errors.
pub fn read_feature_table<R: Read>(
    reader: R,
    modality_name: &str,
    expected_dim: usize,
    source: &Path,
) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::table(source, format!("unreadable header: {e}")))?
        .clone();
    let fixed = ["sample_id", "class", "split"];
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i) != Some(name) {
            return Err(Error::table(
                source,
                format!("header column {} must be {name:?}, found {:?}", i + 1, header.get(i).unwrap_or("")),
            ));
        }
    }
    let header_dim = header.len() - fixed.len();
    for (d, col) in header.iter().skip(fixed.len()).enumerate() {
        if col != format!("f_{d}") {
            return Err(Error::table(source, format!("feature column {d} must be named f_{d}, found {col:?}")));
        }
    }
    if header_dim != expected_dim {
        return Err(Error::table(
            source,
            format!("header declares {header_dim} feature columns, expected {expected_dim}"),
        ));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::table(source, format!("row {row_no}: {e}")))?;
        let found = record.len().saturating_sub(fixed.len());
        if record.len() < fixed.len() || found != expected_dim {
            return Err(Error::table(
                source,
                format!("row {row_no}: dimension mismatch, found {found} features, expected {expected_dim}"),
            ));
        }
        let sample_id = record[0].to_string();
        if !seen.insert(sample_id.clone()) {
            return Err(Error::table(source, format!("row {row_no}: duplicate sample_id {sample_id:?}")));
        }
        let split: Split = record[2]
            .parse()
            .map_err(|e| Error::table(source, format!("row {row_no}: {e}")))?;
        let vector = record
            .iter()
            .skip(fixed.len())
            .enumerate()
            .map(|(d, cell)| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::table(
                        source,
                        format!("row {row_no}, column f_{d}: non-numeric value {cell:?}"),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            sample_id,
            class_label: record[1].to_string(),
            split,
            vector,
        });
    }
    FeatureTable::new(modality_name, expected_dim, rows)
}
