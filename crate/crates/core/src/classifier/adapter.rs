//! Line-delimited JSON bridge to an externally hosted relevance model.
//!
//! The adapter process reads one request per line on stdin,
//! `{"doc_id": "...", "text": "..."}`, and writes one response per line on
//! stdout, `{"doc_id": "...", "logit0": f, "logit1": f}`, in request order.
//! Logit 1 is the "included" class.
//!
//! The reference regime for a fine-tuned transformer behind this adapter is
//! recorded in [`EncoderNotes`]. It is documentation only; nothing here trains
//! such a model.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{ClassifierError, Prediction, Result};
use crate::corpus::ScreeningText;

#[derive(Debug, Serialize)]
struct AdapterRequest<'a> {
    doc_id: &'a str,
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct AdapterResponse {
    doc_id: String,
    logit0: f64,
    logit1: f64,
}

/// Fine-tuning regime of the encoder the adapter is expected to wrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderNotes {
    pub encoder: String,
    pub layers: u32,
    pub hidden_size: u32,
    pub dropout: f64,
    pub learning_rate: f64,
    pub warmup_epochs: u32,
    pub head: String,
}

impl Default for EncoderNotes {
    fn default() -> Self {
        EncoderNotes {
            encoder: "bert-base-uncased".into(),
            layers: 12,
            hidden_size: 768,
            dropout: 0.1,
            learning_rate: 1e-5,
            warmup_epochs: 1,
            head: "dropout + linear(768 -> 2) over the pooled [CLS] output".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub notes: EncoderNotes,
}

impl AdapterConfig {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        AdapterConfig {
            program: program.into(),
            args,
            notes: EncoderNotes::default(),
        }
    }

    /// Spawns the adapter once, streams every text through it, and collects
    /// the logits back in input order.
    pub fn predict(&self, texts: &[&ScreeningText]) -> Result<Vec<Prediction>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ClassifierError::Adapter(format!("spawn {}: {e}", self.program)))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload: Vec<String> = texts
            .iter()
            .map(|t| {
                serde_json::to_string(&AdapterRequest {
                    doc_id: &t.doc_id,
                    text: &t.text,
                })
                .expect("request serializes")
            })
            .collect();
        let writer = std::thread::spawn(move || -> std::io::Result<()> {
            for line in payload {
                stdin.write_all(line.as_bytes())?;
                stdin.write_all(b"\n")?;
            }
            Ok(())
        });

        let stdout = child.stdout.take().expect("piped stdout");
        let read = read_responses(stdout, texts);
        let out = match read {
            Ok(out) => out,
            Err(e) => {
                // unblock the writer and reap the child before reporting
                let _ = child.kill();
                let _ = child.wait();
                let _ = writer.join();
                return Err(e);
            }
        };
        writer
            .join()
            .map_err(|_| ClassifierError::Adapter("writer thread panicked".into()))?
            .map_err(|e| ClassifierError::Adapter(e.to_string()))?;
        let status = child.wait().map_err(|e| ClassifierError::Adapter(e.to_string()))?;
        if out.len() != texts.len() {
            return Err(ClassifierError::Adapter(format!(
                "adapter returned {} of {} predictions (exit {status})",
                out.len(),
                texts.len()
            )));
        }
        Ok(out)
    }
}

fn read_responses(stdout: impl std::io::Read, texts: &[&ScreeningText]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(texts.len());
    for (line, expected) in BufReader::new(stdout).lines().zip(texts) {
        let line = line.map_err(|e| ClassifierError::Adapter(e.to_string()))?;
        let resp: AdapterResponse = serde_json::from_str(&line)
            .map_err(|e| ClassifierError::Adapter(format!("bad response {line:?}: {e}")))?;
        if resp.doc_id != expected.doc_id {
            return Err(ClassifierError::Adapter(format!(
                "response for {} where {} was expected",
                resp.doc_id, expected.doc_id
            )));
        }
        out.push(Prediction::from_logits(resp.doc_id, [resp.logit0, resp.logit1])?);
    }
    Ok(out)
}
