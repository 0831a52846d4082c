//! Request and response bodies.

use chrono::{DateTime, Utc};
use screening_core::classifier::Label;
use screening_core::engine::{Advice, Phase, Project};
use serde::{Deserialize, Serialize};

use crate::jobs::JobView;

/// Project summary served by `GET /v1/projects/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub project_id: String,
    pub phase: Phase,
    /// False while documents are still being uploaded.
    pub corpus_frozen: bool,
    pub model_version: u64,
    pub n_documents: usize,
    pub screened: usize,
    pub unscreened: usize,
    pub identified: usize,
    /// Issued documents still awaiting a decision.
    pub pending: usize,
    /// The issued batch is fully labeled and a retrain may start.
    pub retrain_ready: bool,
    pub advice: AdviceView,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job: Option<JobView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceView {
    pub phase: Phase,
    pub model_version: u64,
    pub stop_training: bool,
    pub last_rank_similarity: Option<f64>,
    pub rho_threshold: Option<f64>,
    pub stop_screening: bool,
    pub last_batch_rate: Option<f64>,
    pub min_inclusion_rate: f64,
}

impl AdviceView {
    pub fn new(phase: Phase, model_version: u64, a: Advice) -> Self {
        AdviceView {
            phase,
            model_version,
            stop_training: a.stop_training,
            last_rank_similarity: a.last_rank_similarity,
            rho_threshold: a.rho_threshold,
            stop_screening: a.stop_screening,
            last_batch_rate: a.last_batch_rate,
            min_inclusion_rate: a.min_inclusion_rate,
        }
    }
}

/// Live inclusion rate. The true number of included documents is unknown
/// mid-screening, so the denominator is the count identified so far: a lower
/// bound on the real one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveInclusionRate {
    pub identified: usize,
    pub denominator: usize,
    pub value: Option<f64>,
    pub lower_bound_denominator_unknown: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRatePoint {
    pub index: usize,
    pub phase: Phase,
    pub size: usize,
    pub included: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPoint {
    pub iteration: u32,
    pub model_version: u64,
    pub training_size: usize,
    pub rank_similarity: Option<f64>,
    pub validation_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub project_id: String,
    pub phase: Phase,
    pub model_version: u64,
    pub n_documents: usize,
    pub screened: usize,
    pub identified: usize,
    pub human_effort: f64,
    pub inclusion_rate: LiveInclusionRate,
    pub batch_rates: Vec<BatchRatePoint>,
    /// One entry per completed iteration: rank similarity and validation F1
    /// of the model version it produced.
    pub iterations: Vec<IterationPoint>,
}

impl MetricsView {
    pub fn staged(project_id: &str, n_documents: usize) -> Self {
        MetricsView {
            project_id: project_id.to_string(),
            phase: Phase::Bootstrapping,
            model_version: 0,
            n_documents,
            screened: 0,
            identified: 0,
            human_effort: 0.0,
            inclusion_rate: LiveInclusionRate {
                identified: 0,
                denominator: 0,
                value: None,
                lower_bound_denominator_unknown: true,
            },
            batch_rates: Vec::new(),
            iterations: Vec::new(),
        }
    }

    pub fn of(project: &Project) -> Self {
        let s = project.state();
        let n = s.corpus_size();
        let identified = s.identified();
        MetricsView {
            project_id: s.project_id.clone(),
            phase: s.phase,
            model_version: s.model_version,
            n_documents: n,
            screened: s.screened.len(),
            identified,
            human_effort: screening_core::metrics::human_effort(s.screened.len(), n).unwrap_or(0.0),
            inclusion_rate: LiveInclusionRate {
                identified,
                denominator: identified,
                value: (identified > 0).then_some(1.0),
                lower_bound_denominator_unknown: true,
            },
            batch_rates: s
                .batch_history
                .iter()
                .enumerate()
                .map(|(index, b)| BatchRatePoint {
                    index,
                    phase: b.phase,
                    size: b.size,
                    included: b.included,
                    rate: b.rate(),
                })
                .collect(),
            iterations: s
                .iterations
                .iter()
                .map(|r| IterationPoint {
                    iteration: r.index,
                    model_version: r.model_version,
                    training_size: r.training_size,
                    rank_similarity: r.rank_similarity,
                    validation_f1: r.validation_f1,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchItem {
    pub position: usize,
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    /// Title and abstract after sentence filtering, as the model sees them.
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    /// Absent until a model has scored the document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchView {
    pub phase: Phase,
    pub model_version: u64,
    pub items: Vec<BatchItem>,
    pub done: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelInput {
    pub doc_id: String,
    pub decision: Label,
    #[serde(default)]
    pub exclusion_criterion: Option<String>,
    #[serde(default = "default_screener")]
    pub screener_id: String,
    /// Defaults to the time the service receives the record.
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

fn default_screener() -> String {
    "anonymous".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelsRequest {
    pub records: Vec<LabelInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub index: usize,
    pub doc_id: Option<String>,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub accepted: usize,
    pub errors: Vec<RecordError>,
    pub screened: usize,
    pub identified: usize,
    /// Set when the labels completed a batch and `auto_retrain` started a job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<JobView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub accepted: usize,
    pub duplicates: usize,
    pub errors: Vec<RecordError>,
    pub n_documents: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTarget {
    PrioritizedScreening,
    Done,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseRequest {
    pub to: PhaseTarget,
}
