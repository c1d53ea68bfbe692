//! File-backed workspace. Everything the service knows lives under one
//! directory:
//!
//! ```text
//! symbols.manifest
//! configs/{name}.cfg.json
//! traces/{id}.trc
//! models/{id}.model.json
//! jobs/{id}.json
//! ```

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tracelens_core::io::to_json_text;
use tracelens_core::miners::{MinerParams, Outcome};
use tracelens_core::symbols::{manifest_to_string, parse_manifest};
use tracelens_core::trace::{load_trace, trace_to_string};
use tracelens_core::{ConcreteTrace, SymbolTable};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub status: JobStatus,
    pub config: String,
    pub traces: Vec<String>,
    pub params: MinerParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceSummary {
    pub id: String,
    pub events: usize,
    pub fields: Vec<String>,
}

/// Short content hash used for model ids and version tokens.
pub fn content_id(text: &str) -> String {
    Sha256::digest(text.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Names and ids become file names, so keep them to a safe alphabet.
pub fn check_name(kind: &str, name: &str) -> Result<(), ApiError> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.len() <= 128
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request("BAD_NAME", format!("`{name}` is not a valid {kind} name")))
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ApiError> {
        let root = root.into();
        for dir in ["configs", "traces", "models", "jobs"] {
            std::fs::create_dir_all(root.join(dir))?;
        }
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, dir: &str, name: &str, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{name}{ext}"))
    }

    /// Replaces the file in one rename so readers never see half a write.
    fn write_atomic(&self, path: &Path, text: &str) -> Result<(), ApiError> {
        let dir = path.parent().unwrap_or(&self.root);
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(text.as_bytes())?;
        tmp.persist(path).map_err(|e| ApiError::from(e.error))?;
        Ok(())
    }

    fn read_optional(path: &Path) -> Result<Option<String>, ApiError> {
        match std::fs::read_to_string(path) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn list(&self, dir: &str, ext: &str) -> Result<Vec<String>, ApiError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(self.root.join(dir))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(ext) {
                out.push(stem.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    /// The symbol table, empty when none has been stored yet.
    pub fn symbols(&self) -> Result<SymbolTable, ApiError> {
        match Self::read_optional(&self.root.join("symbols.manifest"))? {
            Some(text) => Ok(parse_manifest(&text)?),
            None => Ok(SymbolTable::default()),
        }
    }

    pub fn has_symbols(&self) -> bool {
        self.root.join("symbols.manifest").exists()
    }

    pub fn save_symbols(&self, table: &SymbolTable) -> Result<(), ApiError> {
        self.write_atomic(&self.root.join("symbols.manifest"), &manifest_to_string(table))
    }

    pub fn config_text(&self, name: &str) -> Result<Option<String>, ApiError> {
        check_name("config", name)?;
        Self::read_optional(&self.path("configs", name, ".cfg.json"))
    }

    pub fn config_names(&self) -> Result<Vec<String>, ApiError> {
        self.list("configs", ".cfg.json")
    }

    pub fn save_config(&self, name: &str, text: &str) -> Result<(), ApiError> {
        check_name("config", name)?;
        self.write_atomic(&self.path("configs", name, ".cfg.json"), text)
    }

    pub fn trace_ids(&self) -> Result<Vec<String>, ApiError> {
        self.list("traces", ".trc")
    }

    pub fn trace_path(&self, id: &str) -> PathBuf {
        self.path("traces", id, ".trc")
    }

    pub fn load_trace(&self, id: &str) -> Result<ConcreteTrace, ApiError> {
        check_name("trace", id)?;
        let path = self.trace_path(id);
        if !path.exists() {
            return Err(ApiError::not_found(format!("no trace `{id}`")));
        }
        Ok(load_trace(&path)?)
    }

    pub fn save_trace(&self, trace: &ConcreteTrace) -> Result<(), ApiError> {
        check_name("trace", &trace.id)?;
        self.write_atomic(&self.trace_path(&trace.id), &trace_to_string(trace))
    }

    /// Stores a serialized model under its content hash and returns the id.
    pub fn save_model(&self, text: &str) -> Result<String, ApiError> {
        let id = content_id(text);
        let path = self.path("models", &id, ".model.json");
        if !path.exists() {
            self.write_atomic(&path, text)?;
        }
        Ok(id)
    }

    pub fn model_text(&self, id: &str) -> Result<String, ApiError> {
        check_name("model", id)?;
        Self::read_optional(&self.path("models", id, ".model.json"))?
            .ok_or_else(|| ApiError::not_found(format!("no model `{id}`")))
    }

    pub fn model_ids(&self) -> Result<Vec<String>, ApiError> {
        self.list("models", ".model.json")
    }

    pub fn save_job(&self, job: &JobRecord) -> Result<(), ApiError> {
        self.write_atomic(&self.path("jobs", &job.id, ".json"), &to_json_text(job))
    }

    pub fn job(&self, id: &str) -> Result<JobRecord, ApiError> {
        check_name("job", id)?;
        let text = Self::read_optional(&self.path("jobs", id, ".json"))?
            .ok_or_else(|| ApiError::not_found(format!("no job `{id}`")))?;
        serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("job `{id}` is corrupt: {e}")))
    }

    pub fn job_ids(&self) -> Result<Vec<String>, ApiError> {
        self.list("jobs", ".json")
    }

    /// Jobs left running by a previous process can never finish.
    pub fn fail_orphaned_jobs(&self) -> Result<(), ApiError> {
        for id in self.job_ids()? {
            let mut job = self.job(&id)?;
            if job.status == JobStatus::Running {
                job.status = JobStatus::Failed;
                job.error = Some(JobError {
                    code: "JOB_INTERRUPTED".into(),
                    message: "the service stopped before the job finished".into(),
                });
                self.save_job(&job)?;
            }
        }
        Ok(())
    }
}
