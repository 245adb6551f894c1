//! Per-experiment manifest and on-disk layout.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetSummary;

use super::config::ExperimentPlan;
use super::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StatusCounts {
    pub pending: usize,
    pub done: usize,
    pub failed: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.pending + self.done + self.failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub template_set_hash: String,
    pub fingerprint: String,
    pub dataset_summary: DatasetSummary,
    pub expected_summary: Option<DatasetSummary>,
    pub plan: ExperimentPlan,
    pub status: BTreeMap<String, InstanceStatus>,
    /// Error text of the latest attempt for each failed instance.
    #[serde(default)]
    pub failures: BTreeMap<String, String>,
}

impl ExperimentManifest {
    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for s in self.status.values() {
            match s {
                InstanceStatus::Pending => c.pending += 1,
                InstanceStatus::Done => c.done += 1,
                InstanceStatus::Failed => c.failed += 1,
            }
        }
        c
    }

    pub fn ids_with(&self, status: InstanceStatus) -> impl Iterator<Item = &str> {
        self.status
            .iter()
            .filter(move |(_, s)| **s == status)
            .map(|(id, _)| id.as_str())
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| RunError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn store(&self, path: &Path) -> Result<(), RunError> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }
}

/// Replaces `path` with `bytes` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| RunError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| RunError::io(path, e))?;
    tmp.as_file().sync_data().map_err(|e| RunError::io(path, e))?;
    tmp.persist(path).map_err(|e| RunError::io(path, e.error))?;
    Ok(())
}

/// `<out>/<experiment_id>/` and the files inside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentDir {
    root: PathBuf,
}

impl ExperimentDir {
    pub fn new(output_dir: &Path, experiment_id: &str) -> Self {
        ExperimentDir {
            root: output_dir.join(experiment_id),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.jsonl")
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }

    pub fn report(&self, extension: &str) -> PathBuf {
        self.root.join(format!("report.{extension}"))
    }
}
