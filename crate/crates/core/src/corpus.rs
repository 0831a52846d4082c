//! Bibliographic record ingestion and screening-text preparation.
//!
//! A [`Document`] is one title/abstract record. Before it reaches the
//! classifier it is turned into a [`ScreeningText`]: the title is merged into
//! the abstract as its first sentence, the result is split into sentences,
//! and a chain of [`SentenceFilter`]s drops sentences that carry no screening
//! signal (foreign-language passages, publisher boilerplate).

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unreadable file {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("empty corpus")]
    Empty,
    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },
    #[error("invalid record {record}: {message}")]
    InvalidRecord { record: usize, message: String },
    #[error("document {0} has neither title nor abstract")]
    EmptyDocument(String),
    #[error("empty input text")]
    EmptyText,
    #[error("unknown format {0:?}, expected csv or jsonl")]
    UnknownFormat(String),
}

impl CorpusError {
    /// Stable machine-readable code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::Unreadable { .. } => "unreadable_file",
            CorpusError::MissingColumn(_) => "missing_column",
            CorpusError::Empty => "empty_corpus",
            CorpusError::Parse { .. } => "parse_error",
            CorpusError::InvalidRecord { .. } => "invalid_record",
            CorpusError::EmptyDocument(_) => "empty_document",
            CorpusError::EmptyText => "empty_text",
            CorpusError::UnknownFormat(_) => "unknown_format",
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// One bibliographic record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub publication_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
            keywords: Vec::new(),
            year: None,
            publication_type: None,
            source: None,
        }
    }

    /// Rejects empty ids and records with neither title nor abstract.
    pub fn validate(&self, record: usize) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(CorpusError::InvalidRecord {
                record,
                message: "empty id".into(),
            });
        }
        if self.title.trim().is_empty() && self.abstract_text.trim().is_empty() {
            return Err(CorpusError::InvalidRecord {
                record,
                message: format!("document {} has neither title nor abstract", self.id),
            });
        }
        Ok(())
    }
}

/// Ordered, id-unique collection of documents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// Rows dropped because their id was already seen.
    pub duplicates: usize,
}

impl Corpus {
    /// Builds a corpus from records, keeping the first occurrence of each id.
    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut documents = Vec::new();
        let mut duplicates = 0;
        for (i, doc) in docs.into_iter().enumerate() {
            doc.validate(i + 1)?;
            if seen.insert(doc.id.clone()) {
                documents.push(doc);
            } else {
                duplicates += 1;
            }
        }
        if documents.is_empty() {
            return Err(CorpusError::Empty);
        }
        if duplicates > 0 {
            tracing::warn!(duplicates, "duplicate document ids collapsed to first occurrence");
        }
        Ok(Corpus {
            documents,
            duplicates,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

const REQUIRED_COLUMNS: [&str; 3] = ["id", "title", "abstract"];

/// Reads a CSV or JSONL file into a corpus.
pub fn ingest(path: impl AsRef<Path>, format: Format) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let docs = match format {
        Format::Csv => read_csv(BufReader::new(file))?,
        Format::Jsonl => read_jsonl(BufReader::new(file))?,
    };
    Corpus::from_documents(docs)
}

/// Parses CSV rows. Optional columns may be absent from the header.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<Document>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Parse {
            record: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    for required in REQUIRED_COLUMNS {
        if col(required).is_none() {
            return Err(CorpusError::MissingColumn(required.to_string()));
        }
    }
    let (id_c, title_c, abs_c) = (col("id").unwrap(), col("title").unwrap(), col("abstract").unwrap());
    let (kw_c, year_c, pt_c, src_c) = (col("keywords"), col("year"), col("publication_type"), col("source"));

    let mut docs = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let record = i + 1;
        let row = row.map_err(|e| CorpusError::Parse {
            record,
            message: e.to_string(),
        })?;
        let field = |c: usize| row.get(c).unwrap_or("").to_string();
        let opt = |c: Option<usize>| {
            c.and_then(|c| row.get(c))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let year = match opt(year_c) {
            Some(y) => Some(y.parse::<i32>().map_err(|_| CorpusError::Parse {
                record,
                message: format!("year {y:?} is not an integer"),
            })?),
            None => None,
        };
        docs.push(Document {
            id: field(id_c).trim().to_string(),
            title: field(title_c),
            abstract_text: field(abs_c),
            keywords: opt(kw_c)
                .map(|k| {
                    k.split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default(),
            year,
            publication_type: opt(pt_c),
            source: opt(src_c),
        });
    }
    Ok(docs)
}

/// Parses one JSON object per line; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let record = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            record,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            record,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
            record,
            message: "expected a JSON object".into(),
        })?;
        for required in REQUIRED_COLUMNS {
            if !obj.contains_key(required) {
                return Err(CorpusError::MissingColumn(required.to_string()));
            }
        }
        let mut doc: Document = serde_json::from_value(value).map_err(|e| CorpusError::Parse {
            record,
            message: e.to_string(),
        })?;
        doc.id = doc.id.trim().to_string();
        docs.push(doc);
    }
    Ok(docs)
}

fn ends_with_terminal(s: &str) -> bool {
    s.ends_with(['.', '!', '?'])
}

/// Folds the title into the abstract as its leading sentence.
pub fn merge_title_abstract(doc: &Document) -> Result<String> {
    let title = doc.title.trim();
    let abs = doc.abstract_text.trim();
    match (title.is_empty(), abs.is_empty()) {
        (true, true) => Err(CorpusError::EmptyDocument(doc.id.clone())),
        (true, false) => Ok(abs.to_string()),
        (false, true) if ends_with_terminal(title) => Ok(title.to_string()),
        (false, true) => Ok(format!("{title}.")),
        (false, false) if ends_with_terminal(title) => Ok(format!("{title} {abs}")),
        (false, false) => Ok(format!("{title}. {abs}")),
    }
}

/// Splits on `.`, `!` or `?` followed by whitespace. Terminal punctuation
/// stays with its sentence; empty fragments are discarded.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(j, next)) = chars.peek() {
                if next.is_whitespace() {
                    let s = text[start..j].trim();
                    if !s.is_empty() {
                        out.push(s);
                    }
                    start = j;
                }
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// A keep/drop decision over single sentences.
pub trait SentenceFilter: Send + Sync {
    fn name(&self) -> &str;
    fn keep(&self, sentence: &str) -> bool;
}

/// Drops sentences whose letters are mostly outside ASCII, a cheap proxy for
/// "not written in English".
#[derive(Debug, Clone)]
pub struct NonAsciiMajorityFilter {
    /// Drop when the non-ASCII share of alphabetic characters exceeds this.
    pub max_non_ascii_share: f64,
}

impl Default for NonAsciiMajorityFilter {
    fn default() -> Self {
        NonAsciiMajorityFilter {
            max_non_ascii_share: 0.5,
        }
    }
}

impl SentenceFilter for NonAsciiMajorityFilter {
    fn name(&self) -> &str {
        "non_ascii_majority"
    }

    fn keep(&self, sentence: &str) -> bool {
        let (mut letters, mut non_ascii) = (0usize, 0usize);
        for c in sentence.chars().filter(|c| c.is_alphabetic()) {
            letters += 1;
            if !c.is_ascii() {
                non_ascii += 1;
            }
        }
        letters == 0 || (non_ascii as f64 / letters as f64) <= self.max_non_ascii_share
    }
}

/// Drops sentences containing any of a set of case-insensitive patterns.
#[derive(Debug, Clone)]
pub struct BoilerplateFilter {
    patterns: Vec<String>,
}

impl BoilerplateFilter {
    pub fn new<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        BoilerplateFilter {
            patterns: patterns.into_iter().map(|p| p.as_ref().to_lowercase()).collect(),
        }
    }
}

impl Default for BoilerplateFilter {
    fn default() -> Self {
        BoilerplateFilter::new(["copyright", "all rights reserved", "©"])
    }
}

impl SentenceFilter for BoilerplateFilter {
    fn name(&self) -> &str {
        "boilerplate"
    }

    fn keep(&self, sentence: &str) -> bool {
        let lower = sentence.to_lowercase();
        !self.patterns.iter().any(|p| lower.contains(p.as_str()))
    }
}

pub fn default_filters() -> Vec<Box<dyn SentenceFilter>> {
    vec![
        Box::new(NonAsciiMajorityFilter::default()),
        Box::new(BoilerplateFilter::default()),
    ]
}

/// Cleaned model input for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningText {
    pub doc_id: String,
    pub text: String,
    pub sentence_count: usize,
    pub dropped_sentence_count: usize,
    /// Set when every sentence was filtered out; the document stays screenable.
    #[serde(default)]
    pub all_dropped: bool,
}

/// Splits `raw` into sentences, runs every filter, and re-joins survivors in order.
pub fn preprocess(
    doc_id: &str,
    raw: &str,
    filters: &[Box<dyn SentenceFilter>],
) -> Result<ScreeningText> {
    if raw.trim().is_empty() {
        return Err(CorpusError::EmptyText);
    }
    let sentences = split_sentences(raw);
    let kept: Vec<&str> = sentences
        .iter()
        .copied()
        .filter(|s| filters.iter().all(|f| f.keep(s)))
        .collect();
    let dropped = sentences.len() - kept.len();
    Ok(ScreeningText {
        doc_id: doc_id.to_string(),
        text: kept.join(" "),
        sentence_count: kept.len(),
        dropped_sentence_count: dropped,
        all_dropped: kept.is_empty(),
    })
}

/// Merge plus preprocess for one document.
pub fn screening_text(doc: &Document, filters: &[Box<dyn SentenceFilter>]) -> Result<ScreeningText> {
    let raw = merge_title_abstract(doc)?;
    preprocess(&doc.id, &raw, filters)
}

/// Screening texts for the whole corpus, in corpus order.
pub fn screening_texts(corpus: &Corpus, filters: &[Box<dyn SentenceFilter>]) -> Result<Vec<ScreeningText>> {
    corpus.documents.iter().map(|d| screening_text(d, filters)).collect()
}

/// Counts for an ingestion run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub documents: usize,
    pub duplicates: usize,
    pub sentences_kept: usize,
    pub sentences_dropped: usize,
    pub documents_fully_dropped: usize,
}

impl PreprocessReport {
    pub fn new(corpus: &Corpus, texts: &[ScreeningText]) -> Self {
        PreprocessReport {
            documents: corpus.len(),
            duplicates: corpus.duplicates,
            sentences_kept: texts.iter().map(|t| t.sentence_count).sum(),
            sentences_dropped: texts.iter().map(|t| t.dropped_sentence_count).sum(),
            documents_fully_dropped: texts.iter().filter(|t| t.all_dropped).count(),
        }
    }
}
