//! Training-instance construction: chunking, `[DOC i]` tagging, seeded
//! shuffling, hard-negative promotion and filtering, length budgeting and the
//! train/dev split.

use std::collections::{BTreeSet, HashMap};
use std::sync::LazyLock;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::judge::{parse_promotion_verdict, JudgeClient, JudgeError, JudgeRequest};
use crate::matching::{char_f1, jaccard_similarity, ngram_overlap, NormalizationRules, DEFAULT_NGRAM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("document indices are not contiguous from 0 (position {position} has index {index})")]
    NonContiguous { position: usize, index: usize },
    #[error("instance {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("no token count for instance {0}")]
    MissingTokenCount(String),
    #[error("invalid build configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Gold,
    HardNegative,
    Promoted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub index: usize,
    pub text: String,
    pub origin: Origin,
}

impl Document {
    pub fn new(index: usize, text: impl Into<String>, origin: Origin) -> Self {
        Self {
            index,
            text: text.into(),
            origin,
        }
    }
}

/// A question, its answer aliases, the ordered context documents and the
/// gold document set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextInstance {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub documents: Vec<Document>,
    pub gold_ids: BTreeSet<usize>,
    #[serde(default)]
    pub source: String,
    /// Optional grouping label for evaluation (e.g. a context-length bucket).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Optional multiple-choice options, in letter order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl ContextInstance {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::Invalid {
            id: self.id.clone(),
            reason,
        };
        if self.answers.is_empty() {
            return Err(invalid("no answer aliases".into()));
        }
        check_contiguous(&self.documents)?;
        if let Some(d) = self.documents.iter().find(|d| d.text.is_empty()) {
            return Err(invalid(format!("document {} has empty text", d.index)));
        }
        if self.gold_ids.is_empty() {
            return Err(invalid("gold set is empty".into()));
        }
        for &g in &self.gold_ids {
            let doc = self
                .documents
                .get(g)
                .ok_or_else(|| invalid(format!("gold id {g} out of range")))?;
            if doc.origin == Origin::HardNegative {
                return Err(invalid(format!("gold id {g} points at a hard negative")));
            }
        }
        Ok(())
    }

    pub fn gold_texts(&self) -> Vec<&str> {
        self.gold_ids
            .iter()
            .filter_map(|&i| self.documents.get(i))
            .map(|d| d.text.as_str())
            .collect()
    }

    /// The serialized `[DOC i]` context.
    pub fn context(&self) -> String {
        render_tagged(&self.documents)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkUnit {
    Words,
    Tokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub max_context_tokens: usize,
    pub shuffle_seed: u64,
    pub retriever_top_k: usize,
    pub fuzzy_threshold: f64,
    pub chunk_unit: ChunkUnit,
    pub chunk_size: usize,
    pub ngram_n: usize,
    pub similarity_rules: NormalizationRules,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            max_context_tokens: 32_768,
            shuffle_seed: 0,
            retriever_top_k: 500,
            fuzzy_threshold: 0.6,
            chunk_unit: ChunkUnit::Words,
            chunk_size: 100,
            ngram_n: DEFAULT_NGRAM,
            similarity_rules: NormalizationRules::lexical(),
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(CorpusError::Config(format!(
                "fuzzy_threshold {} outside [0, 1]",
                self.fuzzy_threshold
            )));
        }
        if self.chunk_size == 0 || self.max_context_tokens == 0 || self.retriever_top_k == 0 || self.ngram_n == 0 {
            return Err(CorpusError::Config(
                "chunk_size, max_context_tokens, retriever_top_k and ngram_n must be positive".into(),
            ));
        }
        Ok(())
    }
}

static PRE_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{Alphabetic}\p{Nd}]+|[^\s\p{Alphabetic}\p{Nd}]").unwrap());

fn units(text: &str, unit: ChunkUnit) -> Vec<&str> {
    match unit {
        ChunkUnit::Words => text.split_whitespace().collect(),
        ChunkUnit::Tokens => PRE_TOKEN.find_iter(text).map(|m| m.as_str()).collect(),
    }
}

/// Splits an article into passages of `chunk_size` words (or pre-tokens);
/// the last passage may be shorter. Units are joined by single spaces.
pub fn chunk_article(text: &str, cfg: &BuildConfig) -> Vec<String> {
    let size = cfg.chunk_size.max(1);
    units(text, cfg.chunk_unit)
        .chunks(size)
        .map(|c| c.join(" "))
        .collect()
}

fn check_contiguous(docs: &[Document]) -> Result<(), CorpusError> {
    match docs.iter().enumerate().find(|(pos, d)| d.index != *pos) {
        Some((position, d)) => Err(CorpusError::NonContiguous {
            position,
            index: d.index,
        }),
        None => Ok(()),
    }
}

fn render_tagged(docs: &[Document]) -> String {
    docs.iter()
        .map(|d| format!("[DOC {}] {}", d.index, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Serializes documents as newline-joined `[DOC i] text` lines.
pub fn tag_documents(docs: &[Document]) -> Result<String, CorpusError> {
    check_contiguous(docs)?;
    Ok(render_tagged(docs))
}

/// Deterministic RNG for an instance: ChaCha8 keyed by
/// SHA-256(seed as little-endian u64 || instance id).
pub fn instance_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Uniform integer in `0..bound` by rejection sampling.
fn below(rng: &mut impl RngCore, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % bound;
        }
    }
}

/// Fisher-Yates permutation of `0..n`: `perm[new_position] = old_position`.
pub fn permutation(n: usize, rng: &mut impl RngCore) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Reorders documents by `perm` (`perm[new] = old`), reindexes them and remaps
/// the gold set.
pub fn apply_permutation(inst: &ContextInstance, perm: &[usize]) -> ContextInstance {
    let mut new_of_old = vec![0usize; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        new_of_old[old] = new;
    }
    let documents = perm
        .iter()
        .enumerate()
        .map(|(new, &old)| Document {
            index: new,
            ..inst.documents[old].clone()
        })
        .collect();
    let gold_ids = inst.gold_ids.iter().map(|&g| new_of_old[g]).collect();
    ContextInstance {
        documents,
        gold_ids,
        ..inst.clone()
    }
}

/// Seeded shuffle of an instance's documents; a pure function of
/// `(seed, inst.id)`.
pub fn shuffle_instance(inst: &ContextInstance, seed: u64) -> ContextInstance {
    let mut rng = instance_rng(seed, &inst.id);
    let perm = permutation(inst.documents.len(), &mut rng);
    apply_permutation(inst, &perm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub jaccard: f64,
    pub char_f1: f64,
    pub ngram: f64,
}

impl SimilarityScores {
    pub fn max(&self) -> f64 {
        self.jaccard.max(self.char_f1).max(self.ngram)
    }
}

pub fn similarity_scores(a: &str, b: &str, cfg: &BuildConfig) -> SimilarityScores {
    let rules = &cfg.similarity_rules;
    SimilarityScores {
        jaccard: jaccard_similarity(a, b, rules),
        char_f1: char_f1(a, b, rules),
        ngram: ngram_overlap(a, b, cfg.ngram_n, rules),
    }
}

/// Stage-1 outcome for one hard negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotionCandidate {
    /// Position of the negative in the input list.
    pub negative: usize,
    pub text: String,
    pub max_similarity: f64,
    /// Best-matching gold (lowest index on ties).
    pub matched_gold: usize,
    pub scores: SimilarityScores,
    pub promoted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromotionReport {
    pub candidates: Vec<PromotionCandidate>,
}

impl PromotionReport {
    pub fn promoted(&self) -> impl Iterator<Item = &PromotionCandidate> {
        self.candidates.iter().filter(|c| c.promoted)
    }
}

/// Fuzzy-matching stage: a negative is promoted when any of Jaccard,
/// character F1 or n-gram overlap against any gold reaches the threshold
/// (inclusive).
pub fn promote_hard_negatives(golds: &[Document], negatives: &[Document], cfg: &BuildConfig) -> PromotionReport {
    let candidates = negatives
        .iter()
        .enumerate()
        .map(|(pos, neg)| {
            let mut best: Option<(usize, SimilarityScores)> = None;
            for (gi, gold) in golds.iter().enumerate() {
                let s = similarity_scores(&gold.text, &neg.text, cfg);
                if best.as_ref().is_none_or(|(_, b)| s.max() > b.max()) {
                    best = Some((gi, s));
                }
            }
            let (matched_gold, scores) = best.unwrap_or((
                0,
                SimilarityScores {
                    jaccard: 0.0,
                    char_f1: 0.0,
                    ngram: 0.0,
                },
            ));
            let max_similarity = scores.max();
            PromotionCandidate {
                negative: pos,
                text: neg.text.clone(),
                max_similarity,
                matched_gold,
                promoted: !golds.is_empty() && max_similarity >= cfg.fuzzy_threshold,
                scores,
            }
        })
        .collect();
    PromotionReport { candidates }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeOutcome {
    Approved,
    Rejected,
    /// Response could not be read as a verdict; the promotion is rejected.
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeDecision {
    pub negative: usize,
    pub outcome: JudgeOutcome,
    pub raw_response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub retained: Vec<PromotionCandidate>,
    pub decisions: Vec<JudgeDecision>,
}

/// Second stage: keep only the promotions the judge confirms as relevant.
/// Requests run concurrently, bounded by the client's in-flight cap.
pub fn judge_filter(
    question: &str,
    golds: &[Document],
    promotions: &[PromotionCandidate],
    judge: &JudgeClient,
) -> Result<FilterOutcome, JudgeError> {
    let gold_docs: Vec<String> = golds.iter().map(|g| g.text.clone()).collect();
    let requests: Vec<JudgeRequest> = promotions
        .iter()
        .map(|p| JudgeRequest::Promotion {
            question: question.to_owned(),
            gold_docs: gold_docs.clone(),
            candidate: p.text.clone(),
        })
        .collect();
    let responses: Vec<Result<String, JudgeError>> = if promotions.len() <= 1 {
        requests.iter().map(|r| judge.ask(r)).collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = requests.iter().map(|r| s.spawn(move || judge.ask(r))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("judge worker panicked"))
                .collect()
        })
    };

    let mut out = FilterOutcome::default();
    for (p, resp) in promotions.iter().zip(responses) {
        let raw = resp?;
        let outcome = match parse_promotion_verdict(&raw) {
            Some(true) => JudgeOutcome::Approved,
            Some(false) => JudgeOutcome::Rejected,
            None => JudgeOutcome::Unparseable,
        };
        log::debug!(
            "judge decision for negative {}: {:?} (raw: {:?})",
            p.negative,
            outcome,
            raw
        );
        if outcome == JudgeOutcome::Approved {
            out.retained.push(p.clone());
        }
        out.decisions.push(JudgeDecision {
            negative: p.negative,
            outcome,
            raw_response: raw,
        });
    }
    Ok(out)
}

/// Counts tokens for length budgeting.
pub trait TokenCounter: Send + Sync {
    /// Tokens in `text`, which is the tagged context plus question of the
    /// instance `id`.
    fn count(&self, id: &str, text: &str) -> Result<usize, CorpusError>;
}

/// Whitespace-delimited units.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, _id: &str, text: &str) -> Result<usize, CorpusError> {
        Ok(text.split_whitespace().count())
    }
}

/// Externally computed per-instance token counts (e.g. from the model's own
/// tokenizer).
#[derive(Debug, Clone, Default)]
pub struct SidecarCounter {
    counts: HashMap<String, usize>,
}

impl SidecarCounter {
    pub fn new(counts: HashMap<String, usize>) -> Self {
        Self { counts }
    }
}

impl TokenCounter for SidecarCounter {
    fn count(&self, id: &str, _text: &str) -> Result<usize, CorpusError> {
        self.counts
            .get(id)
            .copied()
            .ok_or_else(|| CorpusError::MissingTokenCount(id.to_owned()))
    }
}

/// Whether the tagged context plus question fits the token budget (inclusive).
pub fn filter_by_length(inst: &ContextInstance, counter: &dyn TokenCounter, cfg: &BuildConfig) -> Result<bool, CorpusError> {
    let context = tag_documents(&inst.documents)?;
    let text = if inst.question.is_empty() {
        context
    } else if context.is_empty() {
        inst.question.clone()
    } else {
        format!("{context}\n{}", inst.question)
    };
    Ok(counter.count(&inst.id, &text)? <= cfg.max_context_tokens)
}

/// Deterministic train/dev partition with `round(ratio * n)` training items.
/// Both halves keep the input order.
pub fn split_dataset<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n = items.len();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let n_train = (ratio * n as f64).round() as usize;
    let mut rng = instance_rng(seed, "split");
    let perm = permutation(n, &mut rng);
    let mut is_train = vec![false; n];
    for &i in &perm[..n_train] {
        is_train[i] = true;
    }
    let (mut train, mut dev) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (item, t) in items.iter().zip(is_train) {
        if t {
            train.push(item.clone());
        } else {
            dev.push(item.clone());
        }
    }
    Ok((train, dev))
}

/// A question with its gold passages and retrieved candidates, before
/// refinement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub gold_docs: Vec<String>,
    pub retrieved: Vec<String>,
}

/// Everything recorded while turning one candidate into an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub instance: ContextInstance,
    pub promotion: PromotionReport,
    pub filter: FilterOutcome,
}

/// Refines a candidate into a shuffled instance: fuzzy promotion, optional
/// judge filtering (`None` approves every stage-1 promotion), assembly and
/// seeded shuffle.
pub fn refine_candidate(cand: &Candidate, cfg: &BuildConfig, judge: Option<&JudgeClient>) -> Result<Refinement, RefineError> {
    if cand.gold_docs.is_empty() {
        return Err(RefineError::Invalid(CorpusError::Invalid {
            id: cand.id.clone(),
            reason: "no gold documents".into(),
        }));
    }
    if cand.answers.is_empty() {
        return Err(RefineError::Invalid(CorpusError::Invalid {
            id: cand.id.clone(),
            reason: "no answer aliases".into(),
        }));
    }
    let golds: Vec<Document> = cand
        .gold_docs
        .iter()
        .enumerate()
        .map(|(i, t)| Document::new(i, t.clone(), Origin::Gold))
        .collect();
    let gold_set: BTreeSet<&str> = cand.gold_docs.iter().map(String::as_str).collect();
    // Retrieval can return the gold passages themselves; drop exact copies.
    let negatives: Vec<Document> = cand
        .retrieved
        .iter()
        .filter(|t| !t.trim().is_empty() && !gold_set.contains(t.as_str()))
        .take(cfg.retriever_top_k)
        .enumerate()
        .map(|(i, t)| Document::new(i, t.clone(), Origin::HardNegative))
        .collect();

    let promotion = promote_hard_negatives(&golds, &negatives, cfg);
    let promoted: Vec<PromotionCandidate> = promotion.promoted().cloned().collect();
    let filter = match judge {
        Some(j) => judge_filter(&cand.question, &golds, &promoted, j).map_err(RefineError::Judge)?,
        None => FilterOutcome {
            retained: promoted,
            decisions: Vec::new(),
        },
    };
    let approved: BTreeSet<usize> = filter.retained.iter().map(|p| p.negative).collect();

    let mut documents = golds;
    let mut gold_ids: BTreeSet<usize> = (0..documents.len()).collect();
    for neg in negatives {
        let index = documents.len();
        let origin = if approved.contains(&neg.index) {
            gold_ids.insert(index);
            Origin::Promoted
        } else {
            Origin::HardNegative
        };
        documents.push(Document::new(index, neg.text, origin));
    }
    let instance = ContextInstance {
        id: cand.id.clone(),
        question: cand.question.clone(),
        answers: cand.answers.clone(),
        documents,
        gold_ids,
        source: "build-data".into(),
        group: None,
        choices: None,
    };
    instance.validate().map_err(RefineError::Invalid)?;
    Ok(Refinement {
        instance: shuffle_instance(&instance, cfg.shuffle_seed),
        promotion,
        filter,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error(transparent)]
    Invalid(CorpusError),
    #[error(transparent)]
    Judge(JudgeError),
}
