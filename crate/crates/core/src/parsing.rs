//! Decomposition of raw model outputs into the fields scored by the reward
//! functions, plus the inverse of the `[DOC i]` context template.
//!
//! Every extractor is total: malformed input surfaces as a [`FormatFlag`] or
//! a typed error, never a panic.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::token_count;

/// Maximum whitespace tokens per quote accepted by the quote reward.
pub const QUOTE_TOKEN_LIMIT: usize = 30;

/// Answer markers, matched case-insensitively. The last occurrence of any of
/// them in an output is the model's committed answer.
pub const ANSWER_MARKERS: [&str; 3] = ["the correct answer is", "the answer is", "answer:"];

static DOC_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[\s*doc\s*(-?\d+)\s*\]").unwrap());
static CANONICAL_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\[DOC -?\d+\]$").unwrap());
static IDS_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)relevant\s+document\s+ids\s*:").unwrap());
static CONTENTS_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\s*relevant\s+documents\s*:\s*$").unwrap());
static QUOTE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)^\s*quote\s*\d+\s*:\s*["\u{201C}](.*)["\u{201D}]\s*$"#).unwrap());
static BOXED_CRITERION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\\?boxed\s*\{\s*criterion\s*(\d+)\s*:\s*([^}]*?)\s*\}").unwrap()
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatFlag {
    NoAnswerMarker,
    MalformedIds,
    OverlongQuote,
    EmptySections,
}

impl FormatFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoAnswerMarker => "no_answer_marker",
            Self::MalformedIds => "malformed_ids",
            Self::OverlongQuote => "overlong_quote",
            Self::EmptySections => "empty_sections",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdsError {
    #[error("no document ID declaration found")]
    Missing,
    #[error("[DOC -1] mixed with real document IDs")]
    MixedSentinel,
    #[error("negative document ID other than the -1 sentinel: {0}")]
    Negative(i64),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerdictError {
    #[error("criterion {0} missing from judge response")]
    Missing(u8),
    #[error("criterion {0} appears more than once")]
    Duplicated(u8),
    #[error("criterion {criterion} has value {value:?}, expected 0 or 1")]
    OutOfRange { criterion: u8, value: String },
    #[error("unknown criterion number {0}")]
    UnknownCriterion(String),
}

/// The three binary judge criteria, in rubric order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub reasoning_quality: u8,
    pub document_grounding: u8,
    pub answer_correctness: u8,
    pub raw: String,
}

/// Structured view of one model output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub answer: Option<String>,
    pub doc_ids: Option<BTreeSet<usize>>,
    pub contents: Option<BTreeMap<usize, String>>,
    pub quotes: Option<Vec<String>>,
    pub citations: Option<BTreeSet<usize>>,
    pub format_flags: BTreeSet<FormatFlag>,
}

impl ParsedOutput {
    pub fn parse(y: &str) -> Self {
        let mut flags = BTreeSet::new();

        let answer = extract_answer(y);
        if answer.is_none() {
            flags.insert(FormatFlag::NoAnswerMarker);
        }

        let contents = extract_contents(y);
        if contents.is_none() {
            flags.insert(FormatFlag::EmptySections);
        }

        let doc_ids = match extract_doc_ids(y) {
            Ok(ids) => Some(ids),
            Err(_) => {
                flags.insert(FormatFlag::MalformedIds);
                None
            }
        };

        // Reproduced blocks must be declared documents.
        if let (Some(ids), Some(blocks)) = (&doc_ids, &contents) {
            if !blocks.keys().all(|k| ids.contains(k)) {
                flags.insert(FormatFlag::MalformedIds);
            }
        }
        let doc_ids = if flags.contains(&FormatFlag::MalformedIds) {
            None
        } else {
            doc_ids
        };

        let quotes = extract_quotes(y);
        if quotes.iter().any(|q| token_count(q) > QUOTE_TOKEN_LIMIT) {
            flags.insert(FormatFlag::OverlongQuote);
        }
        let citations = extract_citations(y);

        Self {
            answer,
            doc_ids,
            contents,
            quotes: (!quotes.is_empty()).then_some(quotes),
            citations: (!citations.is_empty()).then_some(citations),
            format_flags: flags,
        }
    }

    pub fn has_flag(&self, flag: FormatFlag) -> bool {
        self.format_flags.contains(&flag)
    }
}

/// Byte offset just past the last answer marker, if any.
fn last_marker_end(y: &str) -> Option<usize> {
    let lower = y.to_lowercase();
    // Lowercasing can change byte lengths for some scripts; fall back to an
    // ASCII-only fold in that case so offsets stay valid for `y`.
    let haystack = if lower.len() == y.len() {
        lower
    } else {
        y.to_ascii_lowercase()
    };
    ANSWER_MARKERS
        .iter()
        .filter_map(|m| haystack.rfind(m).map(|pos| (pos, pos + m.len())))
        .max_by_key(|&(start, end)| (start, std::cmp::Reverse(end)))
        .map(|(_, end)| end)
}

/// Text after the last answer marker, up to end of line, trimmed. `None` when
/// no marker is present.
pub fn extract_answer(y: &str) -> Option<String> {
    let end = last_marker_end(y)?;
    let rest = &y[end..];
    let line = rest.split('\n').next().unwrap_or("");
    let line = line.trim_start_matches(|c: char| c == ':' || c.is_whitespace());
    Some(line.trim().to_owned())
}

fn tags_in(line: &str) -> Vec<i64> {
    DOC_TAG
        .captures_iter(line)
        .filter_map(|c| c[1].parse::<i64>().ok())
        .collect()
}

fn log_lenient_tags(line: &str) {
    for m in DOC_TAG.find_iter(line) {
        if !CANONICAL_TAG.is_match(m.as_str()) {
            log::debug!("accepted non-canonical document tag {:?}", m.as_str());
        }
    }
}

/// A line consisting solely of document tags separated by commas.
fn is_bare_tag_list(line: &str) -> bool {
    let stripped = DOC_TAG.replace_all(line, "");
    !tags_in(line).is_empty() && stripped.chars().all(|c| c == ',' || c.is_whitespace())
}

fn ids_from_tags(tags: &[i64]) -> Result<BTreeSet<usize>, IdsError> {
    if tags.contains(&-1) {
        return if tags.iter().all(|&t| t == -1) {
            Ok(BTreeSet::new())
        } else {
            Err(IdsError::MixedSentinel)
        };
    }
    if let Some(&neg) = tags.iter().find(|&&t| t < 0) {
        return Err(IdsError::Negative(neg));
    }
    Ok(tags.iter().map(|&t| t as usize).collect())
}

/// The declared set of relevant document IDs.
///
/// Accepted declarations, in priority order: the last "Relevant Document
/// IDs:" line; the first line before any "Relevant documents:" section made
/// only of comma-separated `[DOC i]` tags; the block headers of that section.
/// `[DOC -1]` alone means no relevant documents.
pub fn extract_doc_ids(y: &str) -> Result<BTreeSet<usize>, IdsError> {
    if let Some(line) = y.lines().rfind(|l| IDS_HEADER.is_match(l)) {
        log_lenient_tags(line);
        let after = IDS_HEADER.splitn(line, 2).nth(1).unwrap_or("");
        let tags = tags_in(after);
        if tags.is_empty() {
            return Err(IdsError::Missing);
        }
        return ids_from_tags(&tags);
    }
    let preamble = CONTENTS_HEADER.find(y).map_or(y, |m| &y[..m.start()]);
    if let Some(line) = preamble.lines().find(|l| is_bare_tag_list(l)) {
        log_lenient_tags(line);
        return ids_from_tags(&tags_in(line));
    }
    if let Some(section) = contents_section(y) {
        let tags: Vec<i64> = section
            .lines()
            .filter_map(leading_tag)
            .map(|(id, _)| id)
            .collect();
        if !tags.is_empty() {
            return ids_from_tags(&tags);
        }
    }
    Err(IdsError::Missing)
}

/// Text after the "Relevant documents:" header line, if present.
fn contents_section(y: &str) -> Option<&str> {
    let m = CONTENTS_HEADER.find(y)?;
    Some(&y[m.end()..])
}

/// A tag at the start of a line, with whatever follows it on that line.
fn leading_tag(line: &str) -> Option<(i64, &str)> {
    let trimmed = line.trim_start();
    let caps = DOC_TAG.captures(trimmed)?;
    let whole = caps.get(0)?;
    if whole.start() != 0 {
        return None;
    }
    let id = caps[1].parse().ok()?;
    Some((id, &trimmed[whole.end()..]))
}

fn starts_with_marker(line: &str) -> bool {
    let l = line.trim_start().to_ascii_lowercase();
    ANSWER_MARKERS.iter().any(|m| l.starts_with(m))
}

/// Reproduced document blocks keyed by document index. `None` when the
/// "Relevant documents:" header is missing.
pub fn extract_contents(y: &str) -> Option<BTreeMap<usize, String>> {
    let section = contents_section(y)?;
    let mut blocks = BTreeMap::new();
    let mut current: Option<(i64, Vec<&str>)> = None;
    let flush = |cur: Option<(i64, Vec<&str>)>, blocks: &mut BTreeMap<usize, String>| {
        if let Some((id, lines)) = cur {
            if id >= 0 {
                blocks
                    .entry(id as usize)
                    .or_insert_with(|| lines.join("\n").trim().to_owned());
            }
        }
    };
    for line in section.lines() {
        if starts_with_marker(line) {
            break;
        }
        if let Some((id, rest)) = leading_tag(line) {
            flush(current.take(), &mut blocks);
            current = Some((id, vec![rest]));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    flush(current, &mut blocks);
    Some(blocks)
}

/// Quoted spans from `Quote N: "..."` lines, in order. Straight and curly
/// double quotes are both accepted.
pub fn extract_quotes(y: &str) -> Vec<String> {
    y.lines()
        .filter_map(|l| QUOTE_LINE.captures(l).map(|c| c[1].to_owned()))
        .collect()
}

/// Every non-negative `[DOC X]` anywhere in the output.
pub fn extract_citations(y: &str) -> BTreeSet<usize> {
    tags_in(y)
        .into_iter()
        .filter(|&t| t >= 0)
        .map(|t| t as usize)
        .collect()
}

/// Parses the three boxed rubric scores from a judge response.
pub fn parse_judge_verdict(text: &str) -> Result<JudgeVerdict, VerdictError> {
    let mut scores: [Option<u8>; 3] = [None; 3];
    for caps in BOXED_CRITERION.captures_iter(text) {
        let criterion: u8 = match caps[1].parse() {
            Ok(n @ 1..=3) => n,
            _ => return Err(VerdictError::UnknownCriterion(caps[1].to_owned())),
        };
        let value = match caps[2].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(VerdictError::OutOfRange {
                    criterion,
                    value: other.to_owned(),
                })
            }
        };
        let slot = &mut scores[usize::from(criterion - 1)];
        if slot.is_some() {
            return Err(VerdictError::Duplicated(criterion));
        }
        *slot = Some(value);
    }
    let get = |i: usize| scores[i].ok_or(VerdictError::Missing(i as u8 + 1));
    Ok(JudgeVerdict {
        reasoning_quality: get(0)?,
        document_grounding: get(1)?,
        answer_correctness: get(2)?,
        raw: text.to_owned(),
    })
}

/// Inverse of the `[DOC i] text` context template: each document's index and
/// the byte range of its body within `context`.
///
/// Documents are recognized in sequence: `[DOC k] ` must start the context
/// (k = 0) or follow a newline, and each next tag must carry index k + 1.
pub fn extract_doc_spans(context: &str) -> Vec<(usize, Range<usize>)> {
    let mut spans = Vec::new();
    let first = "[DOC 0] ";
    if !context.starts_with(first) {
        return spans;
    }
    let mut index = 0usize;
    let mut body_start = first.len();
    loop {
        let next_tag = format!("\n[DOC {}] ", index + 1);
        match context[body_start..].find(&next_tag) {
            Some(off) => {
                let end = body_start + off;
                spans.push((index, body_start..end));
                body_start = end + next_tag.len();
                index += 1;
            }
            None => {
                spans.push((index, body_start..context.len()));
                return spans;
            }
        }
    }
}
