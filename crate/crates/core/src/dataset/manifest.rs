use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bgmm::BgmmConfig;
use crate::error::{Error, Result};

/// Seeds used when a manifest lists none.
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    #[serde(rename = "classes")]
    pub class_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub path: PathBuf,
    pub dim: usize,
    /// Min-max scale this modality into `[0, 1]` before concatenation.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    #[default]
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
}

/// A validated class-incremental experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Label for this feature configuration in reports; defaults to the
    /// modality names joined with `+`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tasks: Vec<TaskSpec>,
    pub modalities: Vec<ModalitySpec>,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub bgmm: BgmmConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: String,
    /// Add log class-frequency priors to likelihood scores.
    #[serde(default)]
    pub class_priors: bool,
    /// Train the jointly-trained reference after every task (needed for IM).
    #[serde(default = "default_true")]
    pub joint_reference: bool,
    /// Directory that relative paths resolve against; set by [`load_manifest`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_output() -> String {
    "results".to_string()
}

fn default_true() -> bool {
    true
}

impl ExperimentManifest {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.modalities
                .iter()
                .map(|m| m.name.as_str())
                .collect::<Vec<_>>()
                .join("+")
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    /// Same experiment restricted to the named modalities, in the given order.
    pub fn with_modalities(&self, names: &[&str]) -> Result<ExperimentManifest> {
        let modalities = names
            .iter()
            .map(|n| {
                self.modalities
                    .iter()
                    .find(|m| m.name == *n)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("unknown modality {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = ExperimentManifest {
            name: None,
            modalities,
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Validation("manifest needs at least one task".into()));
        }
        if self.modalities.is_empty() {
            return Err(Error::Validation("manifest needs at least one modality".into()));
        }
        let mut task_names = HashSet::new();
        let mut classes = HashSet::new();
        for task in &self.tasks {
            if task.name.is_empty() {
                return Err(Error::Validation("task name must not be empty".into()));
            }
            if !task_names.insert(task.name.as_str()) {
                return Err(Error::Validation(format!("duplicate task name {:?}", task.name)));
            }
            if task.class_labels.is_empty() {
                return Err(Error::Validation(format!("task {:?} has no classes", task.name)));
            }
            let mut local = HashSet::new();
            for class in &task.class_labels {
                if !local.insert(class.as_str()) {
                    return Err(Error::Validation(format!(
                        "class {class:?} is listed twice in task {:?}",
                        task.name
                    )));
                }
                if !classes.insert(class.as_str()) {
                    return Err(Error::Validation(format!(
                        "class appears in multiple tasks: {class:?}"
                    )));
                }
            }
        }
        let mut modality_names = HashSet::new();
        for m in &self.modalities {
            if m.name.is_empty() {
                return Err(Error::Validation("modality name must not be empty".into()));
            }
            if !modality_names.insert(m.name.as_str()) {
                return Err(Error::Validation(format!("duplicate modality {:?}", m.name)));
            }
            if m.dim == 0 {
                return Err(Error::Validation(format!("modality {:?} has dim 0", m.name)));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("manifest needs at least one seed".into()));
        }
        self.bgmm.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Validation(msg),
            other => other,
        })
    }
}

/// Parse and validate manifest JSON. Relative paths stay unresolved.
pub fn parse_manifest(text: &str) -> Result<ExperimentManifest> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let manifest: ExperimentManifest =
        serde_json::from_value(value).map_err(|e| Error::Validation(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Read a manifest file; relative paths inside it resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<ExperimentManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = parse_manifest(&text)?;
    manifest.base_dir = Some(
        path.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    );
    Ok(manifest)
}
