//! File-backed project directory.
//!
//! ```text
//! <dir>/config.json           project id and engine config
//! <dir>/corpus.jsonl          document snapshot
//! <dir>/texts.jsonl           preprocessed screening texts
//! <dir>/ledger.jsonl          event log, one event per line, fsynced on append
//! <dir>/iterations.jsonl      iteration history
//! <dir>/predictions/vN.jsonl  ranked predictions of model version N
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{EngineConfig, EngineError, IterationRecord, LedgerEvent, Result};
use crate::classifier::Prediction;
use crate::corpus::{Document, ScreeningText};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredConfig {
    pub project_id: String,
    pub config: EngineConfig,
}

#[derive(Debug)]
pub struct ProjectStore {
    dir: PathBuf,
    ledger: File,
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    w.get_ref().sync_all()?;
    Ok(())
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            EngineError::Corrupt(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

fn append_line<T: Serialize>(file: &mut File, item: &T) -> Result<()> {
    let mut line = serde_json::to_vec(item)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()?;
    Ok(())
}

impl ProjectStore {
    /// Creates a fresh project directory. Fails if one already exists there.
    pub fn create(
        dir: impl Into<PathBuf>,
        stored: &StoredConfig,
        documents: &[Document],
        texts: &[ScreeningText],
    ) -> Result<Self> {
        let dir = dir.into();
        if dir.join("config.json").exists() {
            return Err(EngineError::Corrupt(format!("{} already holds a project", dir.display())));
        }
        fs::create_dir_all(dir.join("predictions"))?;
        fs::write(dir.join("config.json"), serde_json::to_vec_pretty(stored)?)?;
        write_jsonl(&dir.join("corpus.jsonl"), documents)?;
        write_jsonl(&dir.join("texts.jsonl"), texts)?;
        File::create(dir.join("iterations.jsonl"))?;
        let ledger = OpenOptions::new().create(true).append(true).open(dir.join("ledger.jsonl"))?;
        Ok(ProjectStore { dir, ledger })
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<(Self, ProjectSnapshot)> {
        let dir = dir.into();
        let stored: StoredConfig = serde_json::from_slice(&fs::read(dir.join("config.json"))?)?;
        let documents = read_jsonl(&dir.join("corpus.jsonl"))?;
        let texts = read_jsonl(&dir.join("texts.jsonl"))?;
        let events = read_jsonl(&dir.join("ledger.jsonl"))?;
        let ledger = OpenOptions::new().append(true).open(dir.join("ledger.jsonl"))?;
        let store = ProjectStore { dir, ledger };
        Ok((
            store,
            ProjectSnapshot {
                stored,
                documents,
                texts,
                events,
            },
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_event(&mut self, event: &LedgerEvent) -> Result<()> {
        append_line(&mut self.ledger, event)
    }

    pub fn append_iteration(&mut self, rec: &IterationRecord) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(self.dir.join("iterations.jsonl"))?;
        append_line(&mut f, rec)
    }

    fn predictions_path(&self, version: u64) -> PathBuf {
        self.dir.join("predictions").join(format!("v{version}.jsonl"))
    }

    pub fn write_predictions(&self, version: u64, preds: &[Prediction]) -> Result<()> {
        write_jsonl(&self.predictions_path(version), preds)
    }

    pub fn read_predictions(&self, version: u64) -> Result<Option<Vec<Prediction>>> {
        let path = self.predictions_path(version);
        if !path.exists() {
            return Ok(None);
        }
        read_jsonl(&path).map(Some)
    }
}

/// Everything read back from a project directory.
#[derive(Debug)]
pub struct ProjectSnapshot {
    pub stored: StoredConfig,
    pub documents: Vec<Document>,
    pub texts: Vec<ScreeningText>,
    pub events: Vec<LedgerEvent>,
}
