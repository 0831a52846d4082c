//! Training jobs: at most one in flight per project.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: String,
    pub status: JobStatus,
    pub iteration: u32,
    pub training_size: usize,
    pub base_model_version: u64,
    /// Set once the job is done.
    pub model_version: Option<u64>,
    pub stop_training: Option<bool>,
    pub sampled: Option<usize>,
    pub error: Option<String>,
    pub created_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

/// Job history of one project. Jobs live in memory only; a job lost to a
/// restart never committed, so the ledger is unaffected.
#[derive(Debug, Default)]
pub struct Jobs {
    by_id: HashMap<String, JobView>,
    running: Option<String>,
}

impl Jobs {
    pub fn running(&self) -> Option<&JobView> {
        self.running.as_ref().and_then(|id| self.by_id.get(id))
    }

    pub fn get(&self, id: &str) -> Option<&JobView> {
        self.by_id.get(id)
    }

    pub fn queue(&mut self, view: JobView) {
        self.running = Some(view.job_id.clone());
        self.by_id.insert(view.job_id.clone(), view);
    }

    pub fn update(&mut self, id: &str, f: impl FnOnce(&mut JobView)) {
        if let Some(job) = self.by_id.get_mut(id) {
            f(job);
            if job.status.is_finished() && self.running.as_deref() == Some(id) {
                self.running = None;
            }
        }
    }
}
