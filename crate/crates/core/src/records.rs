//! JSON-lines wire records and conversions to the domain types.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ContextInstance, CorpusError, Document, Origin};
use crate::evaluation::{AttentionRecord, DocSpan, EvalError};
use crate::parsing::ParsedOutput;
use crate::rewards::{Components, RewardKind, RewardResult};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DocRecord {
    pub text: String,
    pub origin: Origin,
}

/// One line of an instance file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InstanceRecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub docs: Vec<DocRecord>,
    pub gold_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl From<&ContextInstance> for InstanceRecord {
    fn from(inst: &ContextInstance) -> Self {
        Self {
            id: inst.id.clone(),
            question: inst.question.clone(),
            answers: inst.answers.clone(),
            docs: inst
                .documents
                .iter()
                .map(|d| DocRecord {
                    text: d.text.clone(),
                    origin: d.origin,
                })
                .collect(),
            gold_ids: inst.gold_ids.iter().copied().collect(),
            source: inst.source.clone(),
            group: inst.group.clone(),
            choices: inst.choices.clone(),
        }
    }
}

impl TryFrom<InstanceRecord> for ContextInstance {
    type Error = CorpusError;

    fn try_from(r: InstanceRecord) -> Result<Self, CorpusError> {
        let inst = ContextInstance {
            id: r.id,
            question: r.question,
            answers: r.answers,
            documents: r
                .docs
                .into_iter()
                .enumerate()
                .map(|(i, d)| Document::new(i, d.text, d.origin))
                .collect(),
            gold_ids: r.gold_ids.into_iter().collect(),
            source: r.source,
            group: r.group,
            choices: r.choices,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Token count sidecar line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TokenRecord {
    pub id: String,
    pub tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PredictionRecord {
    pub id: String,
    pub output: String,
}

/// Attention dump line; spans are `[doc, start, end)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttentionDumpRecord {
    pub id: String,
    pub doc_spans: Vec<(usize, usize, usize)>,
    pub token_scores: Vec<f64>,
}

impl TryFrom<AttentionDumpRecord> for AttentionRecord {
    type Error = EvalError;

    fn try_from(r: AttentionDumpRecord) -> Result<Self, EvalError> {
        let rec = AttentionRecord {
            instance_id: r.id,
            doc_spans: r
                .doc_spans
                .into_iter()
                .map(|(doc, start, end)| DocSpan { doc, tokens: start..end })
                .collect(),
            token_scores: r.token_scores,
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Either an inline instance or a reference into the loaded corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RewardRequest {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub output_text: String,
    pub kind: RewardKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequestError {
    #[error("exactly one of instance / instance_id must be present")]
    AmbiguousInstance,
    #[error("unknown instance_id {0}")]
    UnknownInstance(String),
    #[error(transparent)]
    Invalid(#[from] CorpusError),
}

impl RewardRequest {
    /// Resolves the request's instance against `corpus`.
    pub fn resolve(&self, corpus: &BTreeMap<String, ContextInstance>) -> Result<ContextInstance, RequestError> {
        match (&self.instance, &self.instance_id) {
            (Some(rec), None) => Ok(ContextInstance::try_from(rec.clone())?),
            (None, Some(id)) => corpus
                .get(id)
                .cloned()
                .ok_or_else(|| RequestError::UnknownInstance(id.clone())),
            _ => Err(RequestError::AmbiguousInstance),
        }
    }
}

/// Diagnostics block of a reward response.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Diagnostics {
    pub kind: RewardKind,
    pub parsed: ParsedOutput,
}

/// One reward response line. Failed requests carry `error` and no score.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RewardResponse {
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Components>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl RewardResponse {
    pub fn ok(request_id: &str, r: RewardResult) -> Self {
        Self {
            request_id: Some(request_id.to_owned()),
            total: Some(r.total),
            components: Some(r.components),
            flags: r.flags,
            diagnostics: Some(Diagnostics {
                kind: r.kind,
                parsed: r.parsed,
            }),
            error: None,
            line: None,
        }
    }

    pub fn error(request_id: Option<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            request_id,
            total: None,
            components: None,
            flags: Vec::new(),
            diagnostics: None,
            error: Some(message.into()),
            line,
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parsed lines of a JSON-lines stream: `(1-based line number, value)` for
/// good lines and line-numbered errors for bad ones. Blank lines are skipped.
pub struct JsonLines<T> {
    pub records: Vec<(usize, T)>,
    pub errors: Vec<ReadError>,
}

impl<T> JsonLines<T> {
    pub fn total(&self) -> usize {
        self.records.len() + self.errors.len()
    }
}

pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<JsonLines<T>, std::io::Error> {
    let mut out = JsonLines {
        records: Vec::new(),
        errors: Vec::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.records.push((i + 1, v)),
            Err(e) => out.errors.push(ReadError::Malformed {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Renders records as JSON lines, each terminated by `\n`.
pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(&it).expect("serializable record"));
        s.push('\n');
    }
    s
}

/// Distinct gold ids; duplicates in a wire record collapse.
pub fn gold_set(r: &InstanceRecord) -> BTreeSet<usize> {
    r.gold_ids.iter().copied().collect()
}
