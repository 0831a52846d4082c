//! Projects and their on-disk layout.
//!
//! ```text
//! <data-dir>/projects/<id>/project.json   id, creation time, settings
//! <data-dir>/projects/<id>/staged.jsonl   documents uploaded before the corpus froze
//! <data-dir>/projects/<id>/engine/        engine store, present once frozen
//! ```
//!
//! Each project has one writer lock. Mutations hold it briefly and then
//! publish fresh read views; reads only clone the published views, so they
//! never wait on training.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::{DateTime, Utc};
use screening_core::classifier::Label;
use screening_core::corpus::{default_filters, screening_texts, Corpus, Document};
use screening_core::engine::{
    EngineConfig, EngineError, IterationJob, IterationOutcome, IterationRecord, LabelRecord, Phase, Project,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;
use crate::jobs::{JobStatus, JobView, Jobs};
use crate::views::{
    AdviceView, BatchItem, BatchView, LabelInput, LabelsResponse, MetricsView, PhaseTarget, RecordError, SessionView,
    UploadResponse,
};

type Result<T> = std::result::Result<T, ApiError>;

/// Project configuration accepted by `POST /v1/projects`: every engine
/// setting plus the service-only fields below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSettings {
    pub engine: EngineConfig,
    /// Start a training job as soon as an issued batch is fully labeled.
    pub auto_retrain: bool,
    /// Allowed exclusion reasons; empty accepts any.
    pub exclusion_criteria: Vec<String>,
}

impl ProjectSettings {
    pub fn from_json(value: Value) -> Result<Self> {
        let mut obj = match value {
            Value::Object(obj) => obj,
            Value::Null => Default::default(),
            _ => return Err(ApiError::BadRequest("project config must be a JSON object".into())),
        };
        let invalid = |field: &str, message: &str| ApiError::InvalidConfig {
            field: field.to_string(),
            message: message.to_string(),
        };
        let auto_retrain = match obj.remove("auto_retrain") {
            None => false,
            Some(Value::Bool(b)) => b,
            Some(_) => return Err(invalid("auto_retrain", "expected a boolean")),
        };
        let exclusion_criteria = match obj.remove("exclusion_criteria") {
            None => Vec::new(),
            Some(v) => serde_json::from_value(v).map_err(|_| invalid("exclusion_criteria", "expected a list of strings"))?,
        };
        let known = serde_json::to_value(EngineConfig::default()).expect("config serializes");
        if let Some(unknown) = obj.keys().find(|k| known.get(k.as_str()).is_none()) {
            return Err(invalid(unknown, "unknown field"));
        }
        let engine: EngineConfig = serde_path_to_error::deserialize(Value::Object(obj)).map_err(|e| ApiError::InvalidConfig {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        engine.validate()?;
        Ok(ProjectSettings {
            engine,
            auto_retrain,
            exclusion_criteria,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProjectMeta {
    project_id: String,
    created_at: DateTime<Utc>,
    settings: ProjectSettings,
}

struct Staging {
    docs: Vec<Document>,
    ids: HashSet<String>,
    duplicates: usize,
    file: Option<File>,
}

enum Slot {
    Staging(Staging),
    Live(Box<Project>),
}

struct Views {
    session: SessionView,
    metrics: MetricsView,
}

pub struct ProjectHandle {
    meta: ProjectMeta,
    dir: Option<PathBuf>,
    slot: Mutex<Slot>,
    views: RwLock<Arc<Views>>,
    jobs: Mutex<Jobs>,
}

fn lock<T>(m: &Mutex<T>) -> Result<MutexGuard<'_, T>> {
    m.lock().map_err(|_| ApiError::Internal("project lock poisoned".into()))
}

fn io_err(e: std::io::Error) -> ApiError {
    ApiError::Engine(EngineError::Io(e))
}

fn record_error(index: usize, doc_id: Option<String>, code: &str, message: impl Into<String>) -> RecordError {
    RecordError {
        index,
        doc_id,
        code: code.to_string(),
        message: message.into(),
    }
}

impl ProjectHandle {
    fn new(meta: ProjectMeta, dir: Option<PathBuf>, slot: Slot) -> Self {
        let views = build_views(&meta, &slot);
        ProjectHandle {
            meta,
            dir,
            slot: Mutex::new(slot),
            views: RwLock::new(Arc::new(views)),
            jobs: Mutex::new(Jobs::default()),
        }
    }

    pub fn id(&self) -> &str {
        &self.meta.project_id
    }

    pub fn settings(&self) -> &ProjectSettings {
        &self.meta.settings
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.meta.created_at
    }

    fn publish(&self, slot: &Slot) {
        let views = Arc::new(build_views(&self.meta, slot));
        match self.views.write() {
            Ok(mut w) => *w = views,
            Err(poisoned) => *poisoned.into_inner() = views,
        }
    }

    fn current_views(&self) -> Arc<Views> {
        match self.views.read() {
            Ok(r) => Arc::clone(&r),
            Err(poisoned) => Arc::clone(&poisoned.into_inner()),
        }
    }

    pub fn session(&self) -> Result<SessionView> {
        let mut session = self.current_views().session.clone();
        let jobs = lock(&self.jobs)?;
        session.job = jobs.running().cloned();
        session.retrain_ready &= session.job.is_none();
        Ok(session)
    }

    pub fn metrics(&self) -> MetricsView {
        self.current_views().metrics.clone()
    }

    pub fn advice(&self) -> AdviceView {
        self.current_views().session.advice.clone()
    }

    pub fn job(&self, job_id: &str) -> Result<JobView> {
        lock(&self.jobs)?
            .get(job_id)
            .cloned()
            .ok_or_else(|| ApiError::JobNotFound(job_id.to_string()))
    }

    /// Stages JSONL documents. Bad lines are reported and skipped; repeated
    /// ids keep their first occurrence.
    pub fn upload(&self, body: &str) -> Result<UploadResponse> {
        let mut slot = lock(&self.slot)?;
        let Slot::Staging(staging) = &mut *slot else {
            return Err(ApiError::CorpusFrozen);
        };
        let mut errors = Vec::new();
        let (mut accepted, mut duplicates) = (0, 0);
        let mut lines = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut doc: Document = match serde_json::from_str(line) {
                Ok(d) => d,
                Err(e) => {
                    errors.push(record_error(i, None, "parse_error", e.to_string()));
                    continue;
                }
            };
            doc.id = doc.id.trim().to_string();
            if let Err(e) = doc.validate(i + 1) {
                errors.push(record_error(i, Some(doc.id), e.code(), e.to_string()));
                continue;
            }
            if !staging.ids.insert(doc.id.clone()) {
                duplicates += 1;
                continue;
            }
            lines.push(serde_json::to_string(&doc).map_err(|e| ApiError::Internal(e.to_string()))?);
            staging.docs.push(doc);
            accepted += 1;
        }
        staging.duplicates += duplicates;
        if let Some(file) = &mut staging.file {
            let mut buf = String::new();
            for l in &lines {
                buf.push_str(l);
                buf.push('\n');
            }
            file.write_all(buf.as_bytes()).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        }
        let n_documents = staging.docs.len();
        self.publish(&slot);
        Ok(UploadResponse {
            accepted,
            duplicates,
            errors,
            n_documents,
        })
    }

    fn freeze(&self, slot: &mut Slot) -> Result<()> {
        let Slot::Staging(staging) = slot else { return Ok(()) };
        if staging.docs.is_empty() {
            return Err(ApiError::EmptyCorpus);
        }
        let corpus = Corpus::from_documents(staging.docs.clone()).map_err(EngineError::from)?;
        let texts = screening_texts(&corpus, &default_filters()).map_err(EngineError::from)?;
        let cfg = self.meta.settings.engine.clone();
        let project = match &self.dir {
            Some(dir) => Project::create(dir.join("engine"), self.id(), cfg, &corpus, texts)?,
            None => Project::new(self.id(), cfg, &corpus, texts)?,
        };
        tracing::info!(project = self.id(), documents = corpus.len(), "corpus frozen");
        *slot = Slot::Live(Box::new(project));
        Ok(())
    }

    /// Next documents to screen; the first call freezes the corpus and
    /// issues the initial random batch.
    pub fn batch(&self, limit: usize) -> Result<BatchView> {
        let mut slot = lock(&self.slot)?;
        self.freeze(&mut slot)?;
        let Slot::Live(project) = &mut *slot else { unreachable!("frozen above") };
        let before = project.state().ledger_len;
        let ids = project.next_batch(limit)?;
        let items = ids
            .into_iter()
            .enumerate()
            .map(|(position, id)| {
                let doc = project.document(&id).expect("batch ids come from the corpus");
                BatchItem {
                    position,
                    title: doc.title.clone(),
                    abstract_text: doc.abstract_text.clone(),
                    text: project.text(&id).map(|t| t.text.clone()).unwrap_or_default(),
                    keywords: doc.keywords.clone(),
                    year: doc.year,
                    priority_score: project.priority_of(&id),
                    doc_id: id,
                }
            })
            .collect();
        let view = BatchView {
            phase: project.state().phase,
            model_version: project.state().model_version,
            items,
            done: project.state().phase == Phase::Done,
        };
        if project.state().ledger_len != before {
            self.publish(&slot);
        }
        Ok(view)
    }

    /// Applies every valid record; invalid ones come back as per-record errors.
    pub fn label(&self, inputs: Vec<LabelInput>) -> Result<LabelsResponse> {
        let mut slot = lock(&self.slot)?;
        let Slot::Live(project) = &mut *slot else {
            return Err(ApiError::NotStarted);
        };
        let criteria = &self.meta.settings.exclusion_criteria;
        let iteration = project.state().iterations.len() as u32;
        let now = Utc::now();
        let mut errors = Vec::new();
        let mut accepted = 0;
        for (index, input) in inputs.into_iter().enumerate() {
            if let Some(c) = &input.exclusion_criterion {
                if input.decision == Label::Included {
                    let msg = "an exclusion criterion needs an exclude decision";
                    errors.push(record_error(index, Some(input.doc_id), "invalid_criterion", msg));
                    continue;
                }
                if !criteria.is_empty() && !criteria.contains(c) {
                    let msg = format!("criterion {c:?} is not one of the project's exclusion criteria");
                    errors.push(record_error(index, Some(input.doc_id), "invalid_criterion", msg));
                    continue;
                }
            }
            let mut rec = LabelRecord::new(input.doc_id, input.decision, input.screener_id, input.timestamp.unwrap_or(now));
            rec.exclusion_criterion = input.exclusion_criterion;
            rec.iteration = iteration;
            let doc_id = rec.doc_id.clone();
            match project.record_label(rec) {
                Ok(_) => accepted += 1,
                Err(e @ EngineError::UnknownDocument(_)) => {
                    errors.push(record_error(index, Some(doc_id), "unknown_document", e.to_string()));
                }
                Err(e) => {
                    self.publish(&slot);
                    return Err(e.into());
                }
            }
        }
        let state = project.state();
        let response = LabelsResponse {
            accepted,
            errors,
            screened: state.screened.len(),
            identified: state.identified(),
            job: None,
        };
        self.publish(&slot);
        Ok(response)
    }

    /// Whether the labels just recorded should kick off a training job.
    pub fn wants_auto_retrain(&self) -> Result<bool> {
        if !self.meta.settings.auto_retrain {
            return Ok(false);
        }
        let session = self.session()?;
        Ok(session.retrain_ready)
    }

    /// Snapshots the training inputs and registers a queued job.
    pub fn prepare_retrain(&self) -> Result<(IterationJob, JobView)> {
        let slot = lock(&self.slot)?;
        let Slot::Live(project) = &*slot else {
            return Err(ApiError::NotStarted);
        };
        let mut jobs = lock(&self.jobs)?;
        if let Some(running) = jobs.running() {
            return Err(ApiError::JobRunning(running.job_id.clone()));
        }
        let job = project.prepare_iteration()?;
        let view = JobView {
            job_id: uuid::Uuid::new_v4().simple().to_string(),
            status: JobStatus::Queued,
            iteration: job.index(),
            training_size: job.training_size(),
            base_model_version: project.state().model_version,
            model_version: None,
            stop_training: None,
            sampled: None,
            error: None,
            created_at: Utc::now(),
            finished_at: None,
        };
        jobs.queue(view.clone());
        Ok((job, view))
    }

    pub fn mark_running(&self, job_id: &str) -> Result<()> {
        lock(&self.jobs)?.update(job_id, |j| j.status = JobStatus::Running);
        Ok(())
    }

    /// Runs a prepared job to completion on the calling thread. The writer
    /// lock is taken only to install the result.
    pub fn run_job(&self, job_id: &str, job: IterationJob) -> Result<JobView> {
        let result = job.run().map_err(ApiError::from).and_then(|outcome| self.commit(outcome));
        let mut jobs = lock(&self.jobs)?;
        jobs.update(job_id, |j| {
            j.finished_at = Some(Utc::now());
            match &result {
                Ok(rec) => {
                    j.status = JobStatus::Done;
                    j.model_version = Some(rec.model_version);
                    j.stop_training = Some(rec.stop_training);
                    j.sampled = Some(rec.sampled_ids.len());
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e.to_string());
                }
            }
        });
        if let Err(e) = &result {
            tracing::warn!(project = self.id(), job = job_id, error = %e, "training job failed");
        }
        jobs.get(job_id).cloned().ok_or_else(|| ApiError::JobNotFound(job_id.to_string()))
    }

    fn commit(&self, outcome: IterationOutcome) -> Result<IterationRecord> {
        let mut slot = lock(&self.slot)?;
        let Slot::Live(project) = &mut *slot else {
            return Err(ApiError::NotStarted);
        };
        let rec = project.commit_iteration(outcome)?;
        self.publish(&slot);
        Ok(rec)
    }

    pub fn set_phase(&self, to: PhaseTarget) -> Result<SessionView> {
        {
            let mut slot = lock(&self.slot)?;
            let Slot::Live(project) = &mut *slot else {
                return Err(ApiError::NotStarted);
            };
            if let Some(running) = lock(&self.jobs)?.running() {
                return Err(ApiError::JobRunning(running.job_id.clone()));
            }
            match to {
                PhaseTarget::PrioritizedScreening => project.advance_to_prioritized()?,
                PhaseTarget::Done => project.finish()?,
            }
            self.publish(&slot);
        }
        self.session()
    }
}

fn build_views(meta: &ProjectMeta, slot: &Slot) -> Views {
    match slot {
        Slot::Staging(staging) => {
            let cfg = &meta.settings.engine;
            let n = staging.docs.len();
            Views {
                session: SessionView {
                    project_id: meta.project_id.clone(),
                    phase: Phase::Bootstrapping,
                    corpus_frozen: false,
                    model_version: 0,
                    n_documents: n,
                    screened: 0,
                    unscreened: n,
                    identified: 0,
                    pending: 0,
                    retrain_ready: false,
                    advice: AdviceView {
                        phase: Phase::Bootstrapping,
                        model_version: 0,
                        stop_training: false,
                        last_rank_similarity: None,
                        rho_threshold: cfg.stop.rho_threshold,
                        stop_screening: false,
                        last_batch_rate: None,
                        min_inclusion_rate: cfg.min_inclusion_rate,
                    },
                    job: None,
                },
                metrics: MetricsView::staged(&meta.project_id, n),
            }
        }
        Slot::Live(project) => {
            let s = project.state();
            let pending = project.pending().len();
            Views {
                session: SessionView {
                    project_id: s.project_id.clone(),
                    phase: s.phase,
                    corpus_frozen: true,
                    model_version: s.model_version,
                    n_documents: s.corpus_size(),
                    screened: s.screened.len(),
                    unscreened: s.unscreened.len(),
                    identified: s.identified(),
                    pending,
                    retrain_ready: s.phase == Phase::ActiveLearning && pending == 0,
                    advice: AdviceView::new(s.phase, s.model_version, project.advice()),
                    job: None,
                },
                metrics: MetricsView::of(project),
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecoveryError {
    #[error("cannot read data directory {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot recover project at {path}: {message}")]
    Project { path: String, message: String },
}

/// All projects served by one instance.
pub struct Registry {
    data_dir: Option<PathBuf>,
    projects: RwLock<HashMap<String, Arc<ProjectHandle>>>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry {
            data_dir: None,
            projects: RwLock::new(HashMap::new()),
        }
    }

    /// Opens `data_dir`, replaying every persisted project.
    pub fn open(data_dir: impl Into<PathBuf>) -> std::result::Result<Self, RecoveryError> {
        let data_dir = data_dir.into();
        let root = data_dir.join("projects");
        let io = |source| RecoveryError::Io {
            path: root.display().to_string(),
            source,
        };
        fs::create_dir_all(&root).map_err(io)?;
        let mut projects = HashMap::new();
        for entry in fs::read_dir(&root).map_err(io)? {
            let dir = entry.map_err(io)?.path();
            if !dir.join("project.json").exists() {
                continue;
            }
            let handle = recover(&dir).map_err(|message| RecoveryError::Project {
                path: dir.display().to_string(),
                message,
            })?;
            projects.insert(handle.id().to_string(), Arc::new(handle));
        }
        tracing::info!(projects = projects.len(), dir = %data_dir.display(), "data directory opened");
        Ok(Registry {
            data_dir: Some(data_dir),
            projects: RwLock::new(projects),
        })
    }

    pub fn create(&self, settings: ProjectSettings) -> Result<Arc<ProjectHandle>> {
        let meta = ProjectMeta {
            project_id: uuid::Uuid::new_v4().simple().to_string(),
            created_at: Utc::now(),
            settings,
        };
        let (dir, file) = match &self.data_dir {
            Some(root) => {
                let dir = root.join("projects").join(&meta.project_id);
                fs::create_dir_all(&dir).map_err(io_err)?;
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("staged.jsonl"))
                    .map_err(io_err)?;
                let body = serde_json::to_vec_pretty(&meta).map_err(|e| ApiError::Internal(e.to_string()))?;
                fs::write(dir.join("project.json"), body).map_err(io_err)?;
                (Some(dir), Some(file))
            }
            None => (None, None),
        };
        let slot = Slot::Staging(Staging {
            docs: Vec::new(),
            ids: HashSet::new(),
            duplicates: 0,
            file,
        });
        let handle = Arc::new(ProjectHandle::new(meta, dir, slot));
        self.projects
            .write()
            .map_err(|_| ApiError::Internal("registry lock poisoned".into()))?
            .insert(handle.id().to_string(), Arc::clone(&handle));
        tracing::info!(project = handle.id(), "project created");
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<Arc<ProjectHandle>> {
        self.projects
            .read()
            .map_err(|_| ApiError::Internal("registry lock poisoned".into()))?
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::ProjectNotFound(id.to_string()))
    }

    /// Every project, oldest first.
    pub fn list(&self) -> Result<Vec<Arc<ProjectHandle>>> {
        let mut all: Vec<_> = self
            .projects
            .read()
            .map_err(|_| ApiError::Internal("registry lock poisoned".into()))?
            .values()
            .cloned()
            .collect();
        all.sort_by(|a, b| a.created_at().cmp(&b.created_at()).then_with(|| a.id().cmp(b.id())));
        Ok(all)
    }
}

fn recover(dir: &Path) -> std::result::Result<ProjectHandle, String> {
    let meta: ProjectMeta = fs::read(dir.join("project.json"))
        .map_err(|e| e.to_string())
        .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))?;
    let slot = if dir.join("engine").join("config.json").exists() {
        Slot::Live(Box::new(Project::open(dir.join("engine")).map_err(|e| e.to_string())?))
    } else {
        let path = dir.join("staged.jsonl");
        let mut docs: Vec<Document> = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| e.to_string())?);
            for line in reader.lines() {
                let line = line.map_err(|e| e.to_string())?;
                if line.trim().is_empty() {
                    continue;
                }
                // a torn final line from a crash mid-upload was never acknowledged
                match serde_json::from_str(&line) {
                    Ok(doc) => docs.push(doc),
                    Err(e) => tracing::warn!(dir = %dir.display(), error = %e, "skipping unreadable staged line"),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| e.to_string())?;
        Slot::Staging(Staging {
            ids: docs.iter().map(|d| d.id.clone()).collect(),
            docs,
            duplicates: 0,
            file: Some(file),
        })
    };
    Ok(ProjectHandle::new(meta, Some(dir.to_path_buf()), slot))
}
