//! The five verifiable reward functions: answer only (AO), IDs + answer (ID),
//! IDs + content + answer (ID_C), IDs + quotes + answer (ID_Q) and
//! reasoning + judge (R_JUDGE).
//!
//! Every function is total over arbitrary model outputs. Parse failures score
//! the affected indicator 0; only judge transport failures surface as errors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ContextInstance;
use crate::judge::{JudgeClient, JudgeError, JudgeRequest};
use crate::matching::{normalize, sub_exact_match_with, token_count, NormalizationRules};
use crate::parsing::{parse_judge_verdict, FormatFlag, ParsedOutput, QUOTE_TOKEN_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewardKind {
    #[serde(rename = "AO")]
    Ao,
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "ID_C", alias = "ID+C")]
    IdC,
    #[serde(rename = "ID_Q", alias = "ID+Q")]
    IdQ,
    #[serde(rename = "R_JUDGE", alias = "R+Judge", alias = "R+JUDGE")]
    RJudge,
}

impl RewardKind {
    pub const ALL: [RewardKind; 5] = [Self::Ao, Self::Id, Self::IdC, Self::IdQ, Self::RJudge];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ao => "AO",
            Self::Id => "ID",
            Self::IdC => "ID_C",
            Self::IdQ => "ID_Q",
            Self::RJudge => "R_JUDGE",
        }
    }

    /// Upper bound of the total for this kind.
    pub fn max_total(self) -> f64 {
        match self {
            Self::Ao => 1.0,
            Self::Id => 2.0,
            Self::IdC | Self::IdQ | Self::RJudge => 3.0,
        }
    }

    fn relevant_flags(self) -> &'static [FormatFlag] {
        use FormatFlag::*;
        match self {
            Self::Ao | Self::RJudge => &[NoAnswerMarker],
            Self::Id => &[NoAnswerMarker, MalformedIds],
            Self::IdC => &[NoAnswerMarker, MalformedIds, EmptySections],
            Self::IdQ => &[NoAnswerMarker, MalformedIds, OverlongQuote],
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown reward kind {0:?} (expected AO, ID, ID_C, ID_Q or R_JUDGE)")]
pub struct UnknownKind(pub String);

impl FromStr for RewardKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AO" => Ok(Self::Ao),
            "ID" => Ok(Self::Id),
            "ID_C" | "ID+C" => Ok(Self::IdC),
            "ID_Q" | "ID+Q" => Ok(Self::IdQ),
            "R_JUDGE" | "R+JUDGE" => Ok(Self::RJudge),
            _ => Err(UnknownKind(s.to_owned())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewardError {
    #[error("reward kind R_JUDGE requires a judge client")]
    MissingJudge,
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub answer_rules: NormalizationRules,
    pub quote_token_limit: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            answer_rules: NormalizationRules::answer(),
            quote_token_limit: QUOTE_TOKEN_LIMIT,
        }
    }
}

/// Indicator components of a reward. Components that do not apply to the
/// reward kind are `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub answer: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quote: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<u8>,
    /// Judge's own answer-correctness criterion; diagnostic only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_answer_criterion: Option<u8>,
}

impl Components {
    /// Sum of the scoring components (the diagnostic criterion excluded).
    pub fn sum(&self) -> f64 {
        [Some(self.answer), self.id, self.content, self.quote, self.judge]
            .into_iter()
            .flatten()
            .map(f64::from)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResult {
    pub kind: RewardKind,
    pub total: f64,
    pub components: Components,
    pub flags: Vec<String>,
    pub parsed: ParsedOutput,
}

impl RewardResult {
    fn new(kind: RewardKind, components: Components, parsed: ParsedOutput, extra_flags: &[&str]) -> Self {
        let mut flags: Vec<String> = kind
            .relevant_flags()
            .iter()
            .filter(|f| parsed.has_flag(**f))
            .map(|f| f.as_str().to_owned())
            .collect();
        flags.extend(extra_flags.iter().map(|s| (*s).to_owned()));
        Self {
            kind,
            total: components.sum(),
            components,
            flags,
            parsed,
        }
    }
}

fn indicator(b: bool) -> u8 {
    u8::from(b)
}

fn answer_indicator(inst: &ContextInstance, parsed: &ParsedOutput, cfg: &RewardConfig) -> u8 {
    let Some(answer) = parsed.answer.as_deref() else {
        return 0;
    };
    indicator(
        inst.answers
            .iter()
            .any(|alias| sub_exact_match_with(answer, alias, &cfg.answer_rules).unwrap_or(false)),
    )
}

fn id_indicator(inst: &ContextInstance, parsed: &ParsedOutput) -> u8 {
    indicator(parsed.doc_ids.as_ref() == Some(&inst.gold_ids))
}

fn content_indicator(inst: &ContextInstance, parsed: &ParsedOutput, cfg: &RewardConfig) -> u8 {
    let Some(contents) = &parsed.contents else {
        return 0;
    };
    if !contents.keys().eq(inst.gold_ids.iter()) {
        return 0;
    }
    indicator(inst.gold_ids.iter().all(|&i| {
        inst.documents
            .get(i)
            .is_some_and(|doc| sub_exact_match_with(&contents[&i], &doc.text, &cfg.answer_rules).unwrap_or(false))
    }))
}

fn quote_indicator(inst: &ContextInstance, parsed: &ParsedOutput, cfg: &RewardConfig) -> u8 {
    let Some(quotes) = parsed.quotes.as_ref().filter(|q| !q.is_empty()) else {
        return 0;
    };
    let golds: Vec<String> = inst
        .gold_texts()
        .into_iter()
        .map(|t| normalize(t, &cfg.answer_rules))
        .collect();
    indicator(quotes.iter().all(|q| {
        let nq = normalize(q, &cfg.answer_rules);
        token_count(q) <= cfg.quote_token_limit && !nq.is_empty() && golds.iter().any(|g| g.contains(&nq))
    }))
}

pub fn r_ao(inst: &ContextInstance, y: &str, cfg: &RewardConfig) -> RewardResult {
    let parsed = ParsedOutput::parse(y);
    let components = Components {
        answer: answer_indicator(inst, &parsed, cfg),
        ..Default::default()
    };
    RewardResult::new(RewardKind::Ao, components, parsed, &[])
}

pub fn r_id(inst: &ContextInstance, y: &str, cfg: &RewardConfig) -> RewardResult {
    let parsed = ParsedOutput::parse(y);
    let components = Components {
        answer: answer_indicator(inst, &parsed, cfg),
        id: Some(id_indicator(inst, &parsed)),
        ..Default::default()
    };
    RewardResult::new(RewardKind::Id, components, parsed, &[])
}

pub fn r_id_c(inst: &ContextInstance, y: &str, cfg: &RewardConfig) -> RewardResult {
    let parsed = ParsedOutput::parse(y);
    let components = Components {
        answer: answer_indicator(inst, &parsed, cfg),
        id: Some(id_indicator(inst, &parsed)),
        content: Some(content_indicator(inst, &parsed, cfg)),
        ..Default::default()
    };
    RewardResult::new(RewardKind::IdC, components, parsed, &[])
}

pub fn r_id_q(inst: &ContextInstance, y: &str, cfg: &RewardConfig) -> RewardResult {
    let parsed = ParsedOutput::parse(y);
    let components = Components {
        answer: answer_indicator(inst, &parsed, cfg),
        id: Some(id_indicator(inst, &parsed)),
        quote: Some(quote_indicator(inst, &parsed, cfg)),
        ..Default::default()
    };
    RewardResult::new(RewardKind::IdQ, components, parsed, &[])
}

/// The judge request for a reasoning output: gold documents only, first
/// answer alias as the reference.
pub fn judge_request(inst: &ContextInstance, y: &str) -> JudgeRequest {
    JudgeRequest::Reasoning {
        question: inst.question.clone(),
        gold_docs: inst.gold_texts().into_iter().map(str::to_owned).collect(),
        answer: inst.answers.first().cloned().unwrap_or_default(),
        solution: y.to_owned(),
    }
}

pub fn r_judge(inst: &ContextInstance, y: &str, judge: &JudgeClient, cfg: &RewardConfig) -> Result<RewardResult, RewardError> {
    let parsed = ParsedOutput::parse(y);
    let raw = judge.ask(&judge_request(inst, y))?;
    let answer = answer_indicator(inst, &parsed, cfg);
    Ok(match parse_judge_verdict(&raw) {
        Ok(v) => {
            let components = Components {
                answer,
                judge: Some(v.reasoning_quality + v.document_grounding),
                judge_answer_criterion: Some(v.answer_correctness),
                ..Default::default()
            };
            RewardResult::new(RewardKind::RJudge, components, parsed, &[])
        }
        Err(e) => {
            log::warn!("unparseable judge verdict for {}: {e}", inst.id);
            let components = Components {
                answer,
                judge: Some(0),
                ..Default::default()
            };
            RewardResult::new(RewardKind::RJudge, components, parsed, &["judge_verdict_unparseable"])
        }
    })
}

/// Dispatches to the reward function for `kind`.
pub fn compute_reward(
    inst: &ContextInstance,
    y: &str,
    kind: RewardKind,
    judge: Option<&JudgeClient>,
    cfg: &RewardConfig,
) -> Result<RewardResult, RewardError> {
    Ok(match kind {
        RewardKind::Ao => r_ao(inst, y, cfg),
        RewardKind::Id => r_id(inst, y, cfg),
        RewardKind::IdC => r_id_c(inst, y, cfg),
        RewardKind::IdQ => r_id_q(inst, y, cfg),
        RewardKind::RJudge => r_judge(inst, y, judge.ok_or(RewardError::MissingJudge)?, cfg)?,
    })
}
