//! Benchmark scoring, attention-based document ranking, top-k KV retention
//! simulation and the aggregate analyses (drop tables, NDCG, correlation).

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::LazyLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::matching::{normalize, sub_exact_match, NormalizationRules};
use crate::parsing::extract_answer;

/// Default cutoff for NDCG.
pub const NDCG_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid attention record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("retention budget {budget} exceeds token count {tokens}")]
    BudgetTooLarge { budget: usize, tokens: usize },
    #[error("NDCG needs k >= 1 and a non-empty relevant set")]
    InvalidNdcg,
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("drop undefined for task {task}: full-context value {value} is not positive")]
    NonPositiveBaseline { task: String, value: f64 },
    #[error("no answer aliases")]
    NoAnswers,
    #[error("gold letter {0:?} is not one of A-D")]
    BadGoldLetter(char),
    #[error("empty group {0}")]
    EmptyGroup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSpan {
    pub doc: usize,
    pub tokens: Range<usize>,
}

/// Per-token attention mass over a context, with the token span of each
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub instance_id: String,
    pub doc_spans: Vec<DocSpan>,
    pub token_scores: Vec<f64>,
}

impl AttentionRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: String| EvalError::InvalidRecord {
            id: self.instance_id.clone(),
            reason,
        };
        if let Some(i) = self.token_scores.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(bad(format!("token score {i} is negative or not finite")));
        }
        let mut spans: Vec<&DocSpan> = self.doc_spans.iter().collect();
        spans.sort_by_key(|s| s.tokens.start);
        let mut prev_end = 0;
        let mut seen = BTreeSet::new();
        for s in spans {
            if s.tokens.start >= s.tokens.end || s.tokens.end > self.token_scores.len() {
                return Err(bad(format!("span of doc {} is empty or out of range", s.doc)));
            }
            if s.tokens.start < prev_end {
                return Err(bad(format!("span of doc {} overlaps another span", s.doc)));
            }
            if !seen.insert(s.doc) {
                return Err(bad(format!("doc {} has more than one span", s.doc)));
            }
            prev_end = s.tokens.end;
        }
        Ok(())
    }
}

/// 1 when any alias sub-exactly matches the prediction.
pub fn subem_score(prediction: &str, answers: &[String]) -> Result<u8, EvalError> {
    if answers.is_empty() {
        return Err(EvalError::NoAnswers);
    }
    Ok(u8::from(
        answers
            .iter()
            .any(|a| sub_exact_match(prediction, a).unwrap_or(false)),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McOutcome {
    pub score: u8,
    pub extracted: Option<char>,
    pub flags: Vec<String>,
}

static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\W*\(?([A-Da-d])\)?(?:[\s.:,)]|$)").unwrap());
static BARE_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\(?([A-D])\)?\s*\.?\s*$").unwrap());

/// Extracts the chosen option letter: first the text after an answer marker,
/// then a bare letter, then a unique choice-text match.
pub fn extract_choice(prediction: &str, choices: &[String]) -> Option<char> {
    let letter = |c: regex::Captures| c[1].chars().next().map(|ch| ch.to_ascii_uppercase());
    if let Some(after) = extract_answer(prediction) {
        if let Some(l) = LETTER.captures(&after).and_then(letter) {
            return Some(l);
        }
        if let Some(l) = unique_choice(&after, choices) {
            return Some(l);
        }
    }
    if let Some(l) = BARE_LETTER.captures(prediction).and_then(letter) {
        return Some(l);
    }
    unique_choice(prediction, choices)
}

fn unique_choice(text: &str, choices: &[String]) -> Option<char> {
    let rules = NormalizationRules::answer();
    let hay = normalize(text, &rules);
    let mut hits = choices.iter().enumerate().filter(|(_, c)| {
        let c = normalize(c, &rules);
        !c.is_empty() && hay.contains(&c)
    });
    let (i, _) = hits.next()?;
    if hits.next().is_some() || i >= 4 {
        return None;
    }
    Some((b'A' + i as u8) as char)
}

/// Multiple-choice accuracy for one prediction.
pub fn mc_accuracy(prediction: &str, choices: &[String], gold_letter: char) -> Result<McOutcome, EvalError> {
    let gold = gold_letter.to_ascii_uppercase();
    if !('A'..='D').contains(&gold) {
        return Err(EvalError::BadGoldLetter(gold_letter));
    }
    let extracted = extract_choice(prediction, choices);
    Ok(McOutcome {
        score: u8::from(extracted == Some(gold)),
        extracted,
        flags: if extracted.is_none() {
            vec!["no_choice_extracted".to_owned()]
        } else {
            Vec::new()
        },
    })
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure over lexically normalized word tokens.
pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    let rules = NormalizationRules::lexical();
    let p = normalize(prediction, &rules);
    let r = normalize(reference, &rules);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let rt: Vec<&str> = r.split_whitespace().collect();
    if pt.is_empty() && rt.is_empty() {
        return 1.0;
    }
    if pt.is_empty() || rt.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&pt, &rt) as f64;
    let precision = lcs / pt.len() as f64;
    let recall = lcs / rt.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionAggregation {
    /// Raw attention mass summed over the span.
    #[default]
    Sum,
    /// Per-token mean over the span.
    Mean,
}

/// Documents ranked by cumulative attention, highest first; ties by
/// ascending document index.
pub fn doc_attention_scores(rec: &AttentionRecord, mode: AttentionAggregation) -> Result<Vec<(usize, f64)>, EvalError> {
    rec.validate()?;
    let mut scores: Vec<(usize, f64)> = rec
        .doc_spans
        .iter()
        .map(|s| {
            let sum: f64 = rec.token_scores[s.tokens.clone()].iter().sum();
            let score = match mode {
                AttentionAggregation::Sum => sum,
                AttentionAggregation::Mean => sum / s.tokens.len() as f64,
            };
            (s.doc, score)
        })
        .collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scores)
}

/// Binary-gain NDCG@k with discount 1/log2(rank + 1).
pub fn ndcg_at_k(ranking: &[usize], relevant: &BTreeSet<usize>, k: usize) -> Result<f64, EvalError> {
    if k == 0 || relevant.is_empty() {
        return Err(EvalError::InvalidNdcg);
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut seen = BTreeSet::new();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(d) && seen.insert(**d))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=relevant.len().min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub mask: Vec<bool>,
    /// (doc, fraction of the doc's tokens retained), in span order.
    pub survival: Vec<(usize, f64)>,
}

/// Keeps the `budget` highest-scored tokens (ties by ascending position).
pub fn simulate_topk_retention(rec: &AttentionRecord, budget: usize) -> Result<Retention, EvalError> {
    rec.validate()?;
    let n = rec.token_scores.len();
    if budget > n {
        return Err(EvalError::BudgetTooLarge { budget, tokens: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rec.token_scores[b].total_cmp(&rec.token_scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..budget] {
        mask[i] = true;
    }
    let survival = rec
        .doc_spans
        .iter()
        .map(|s| {
            let kept = mask[s.tokens.clone()].iter().filter(|&&m| m).count();
            (s.doc, kept as f64 / s.tokens.len() as f64)
        })
        .collect();
    Ok(Retention { mask, survival })
}

/// Relative change per task, in percent, with the mean over tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub drops: IndexMap<String, f64>,
    pub average: f64,
}

impl DropRow {
    /// Values rounded to one decimal, as reported.
    pub fn rounded(&self) -> IndexMap<String, f64> {
        self.drops.iter().map(|(k, v)| (k.clone(), round1(*v))).collect()
    }
}

pub fn round1(v: f64) -> f64 {
    let r = (v * 10.0).round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// `(compressed - full) / full * 100` for every task present in both maps,
/// in `full`'s order.
pub fn drop_table(full: &IndexMap<String, f64>, compressed: &IndexMap<String, f64>) -> Result<DropRow, EvalError> {
    let mut drops = IndexMap::new();
    for (task, &f) in full {
        let Some(&c) = compressed.get(task) else {
            continue;
        };
        if f <= 0.0 || !f.is_finite() {
            return Err(EvalError::NonPositiveBaseline {
                task: task.clone(),
                value: f,
            });
        }
        drops.insert(task.clone(), (c - f) / f * 100.0);
    }
    let average = if drops.is_empty() {
        0.0
    } else {
        drops.values().sum::<f64>() / drops.len() as f64
    };
    Ok(DropRow { drops, average })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Sample Pearson correlation with a two-sided p-value from Student's t with
/// n - 2 degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::UndefinedCorrelation(format!(
            "length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(EvalError::UndefinedCorrelation(format!("n = {n} < 3")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::UndefinedCorrelation("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * df.sqrt() / (1.0 - r * r).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok(Correlation { r, p, n })
}

/// Per-group means and the mean of group means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group_means: IndexMap<String, f64>,
    pub average: f64,
}

pub fn aggregate(groups: &IndexMap<String, Vec<f64>>) -> Result<Aggregate, EvalError> {
    let mut group_means = IndexMap::new();
    for (g, scores) in groups {
        if scores.is_empty() {
            return Err(EvalError::EmptyGroup(g.clone()));
        }
        group_means.insert(g.clone(), scores.iter().sum::<f64>() / scores.len() as f64);
    }
    let average = if group_means.is_empty() {
        0.0
    } else {
        group_means.values().sum::<f64>() / group_means.len() as f64
    };
    Ok(Aggregate { group_means, average })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    pub group: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub k: usize,
    pub per_instance: Vec<InstanceScore>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionSummary {
    /// Fraction of each context's tokens kept.
    pub budget_fraction: f64,
    /// Mean survival of gold documents, per instance.
    pub gold_survival: Vec<InstanceScore>,
    pub aggregate: Aggregate,
}

/// One row of a drop table, named by model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDropRow {
    pub model: String,
    #[serde(flatten)]
    pub row: DropRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropTable {
    pub rows: Vec<NamedDropRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_instance: Vec<InstanceScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<RetentionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_table: Option<DropTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Correlation>,
}

/// Groups per-instance scores in first-seen group order.
pub fn group_scores(scores: &[InstanceScore]) -> IndexMap<String, Vec<f64>> {
    let mut groups: IndexMap<String, Vec<f64>> = IndexMap::new();
    for s in scores {
        groups.entry(s.group.clone()).or_default().push(s.score);
    }
    groups
}

fn fmt1(v: f64) -> String {
    format!("{:.1}", round1(v))
}

impl EvalReport {
    /// Flat TSV tables keyed by file stem.
    pub fn tsv_tables(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let agg_table = |name: &str, agg: &Aggregate, scale: f64| {
            let mut header = vec!["run".to_owned()];
            header.extend(agg.group_means.keys().cloned());
            header.push("Avg".into());
            let mut row = vec![self.run_id.clone()];
            row.extend(agg.group_means.values().map(|v| fmt1(v * scale)));
            row.push(fmt1(agg.average * scale));
            (name.to_owned(), format!("{}\n{}\n", header.join("\t"), row.join("\t")))
        };
        if let Some(agg) = &self.aggregate {
            out.push(agg_table("scores", agg, 100.0));
        }
        if let Some(r) = &self.ranking {
            out.push(agg_table("ndcg", &r.aggregate, 100.0));
        }
        if let Some(r) = &self.retention {
            out.push(agg_table("retention", &r.aggregate, 100.0));
        }
        if let Some(t) = &self.drop_table {
            let mut columns: Vec<String> = Vec::new();
            for row in &t.rows {
                for k in row.row.drops.keys() {
                    if !columns.contains(k) {
                        columns.push(k.clone());
                    }
                }
            }
            let mut text = format!("model\t{}\tAvg\n", columns.join("\t"));
            for row in &t.rows {
                let cells: Vec<String> = columns
                    .iter()
                    .map(|c| row.row.drops.get(c).map(|v| fmt1(*v)).unwrap_or_default())
                    .collect();
                text.push_str(&format!("{}\t{}\t{}\n", row.model, cells.join("\t"), fmt1(row.row.average)));
            }
            out.push(("drop".to_owned(), text));
        }
        if let Some(c) = &self.correlation {
            out.push(("correlation".to_owned(), format!("r\tp\tn\n{:.4}\t{:.4}\t{}\n", c.r, c.p, c.n)));
        }
        out
    }
}
