//! Text normalization and the string-similarity primitives shared by the
//! reward functions, hard-negative refinement and evaluation metrics.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default n for word n-gram matching during refinement.
pub const DEFAULT_NGRAM: usize = 3;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("gold string is empty after normalization")]
    EmptyGold,
}

/// Which normalization steps to apply. Steps run in a fixed order:
/// lowercase, punctuation strip, article removal, whitespace collapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationRules {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub remove_articles: bool,
    pub collapse_whitespace: bool,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            remove_articles: true,
            collapse_whitespace: true,
        }
    }
}

impl NormalizationRules {
    /// QA answer normalization: every step on.
    pub fn answer() -> Self {
        Self::default()
    }

    /// Lexical normalization for similarity and overlap metrics. Articles are
    /// content tokens here, so they are kept.
    pub fn lexical() -> Self {
        Self {
            remove_articles: false,
            ..Self::default()
        }
    }

    pub fn normalize(&self, s: &str) -> String {
        normalize(s, self)
    }
}

/// Normalizes `s` according to `rules`. Idempotent, and the result never has
/// leading or trailing whitespace.
pub fn normalize(s: &str, rules: &NormalizationRules) -> String {
    let mut text: String = if rules.lowercase {
        s.to_lowercase()
    } else {
        s.to_owned()
    };
    if rules.strip_punctuation {
        text.retain(|c| c.is_alphanumeric() || c.is_whitespace());
    }
    if rules.remove_articles || rules.collapse_whitespace {
        let words = text
            .split_whitespace()
            .filter(|w| !(rules.remove_articles && ARTICLES.contains(w)));
        if rules.collapse_whitespace {
            return words.collect::<Vec<_>>().join(" ");
        }
        // Articles removed but inner whitespace preserved: drop each article
        // along with the whitespace run that follows it.
        let mut out = String::with_capacity(text.len());
        let mut rest = text.as_str();
        while !rest.is_empty() {
            let ws_len = rest.len() - rest.trim_start().len();
            let (ws, tail) = rest.split_at(ws_len);
            let word_len = tail.find(char::is_whitespace).unwrap_or(tail.len());
            let (word, after) = tail.split_at(word_len);
            if ARTICLES.contains(&word) {
                let next_ws = after.len() - after.trim_start().len();
                out.push_str(ws);
                rest = &after[next_ws..];
            } else {
                out.push_str(ws);
                out.push_str(word);
                rest = after;
            }
        }
        return out.trim().to_owned();
    }
    text.trim().to_owned()
}

/// Sub-exact match: the normalized gold is a contiguous substring of the
/// normalized prediction.
pub fn sub_exact_match(prediction: &str, gold: &str) -> Result<bool, MatchError> {
    sub_exact_match_with(prediction, gold, &NormalizationRules::answer())
}

pub fn sub_exact_match_with(
    prediction: &str,
    gold: &str,
    rules: &NormalizationRules,
) -> Result<bool, MatchError> {
    let gold = normalize(gold, rules);
    if gold.is_empty() {
        return Err(MatchError::EmptyGold);
    }
    Ok(normalize(prediction, rules).contains(&gold))
}

fn words(s: &str, rules: &NormalizationRules) -> Vec<String> {
    normalize(s, rules)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn set_jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let inter = a.intersection(b).count();
            let union = a.len() + b.len() - inter;
            inter as f64 / union as f64
        }
    }
}

/// Jaccard similarity over the sets of normalized word tokens.
pub fn jaccard_similarity(a: &str, b: &str, rules: &NormalizationRules) -> f64 {
    let a: BTreeSet<String> = words(a, rules).into_iter().collect();
    let b: BTreeSet<String> = words(b, rules).into_iter().collect();
    set_jaccard(&a, &b)
}

/// F1 over the character multisets of the normalized strings (whitespace
/// excluded).
pub fn char_f1(a: &str, b: &str, rules: &NormalizationRules) -> f64 {
    let bag = |s: &str| {
        let mut counts: HashMap<char, usize> = HashMap::new();
        let mut total = 0usize;
        for c in normalize(s, rules).chars().filter(|c| !c.is_whitespace()) {
            *counts.entry(c).or_default() += 1;
            total += 1;
        }
        (counts, total)
    };
    let (ca, na) = bag(a);
    let (cb, nb) = bag(b);
    match (na, nb) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let overlap: usize = ca
        .iter()
        .map(|(c, &n)| n.min(cb.get(c).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / na as f64;
    let recall = overlap as f64 / nb as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Jaccard similarity over word n-gram sets. When either side has fewer than
/// `n` tokens, n drops to the shorter token count (never below 1).
pub fn ngram_overlap(a: &str, b: &str, n: usize, rules: &NormalizationRules) -> f64 {
    let ta = words(a, rules);
    let tb = words(b, rules);
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let n = n.min(ta.len()).min(tb.len()).max(1);
    let grams = |t: &[String]| -> BTreeSet<Vec<String>> {
        t.windows(n).map(|w| w.to_vec()).collect()
    };
    set_jaccard(&grams(&ta), &grams(&tb))
}

/// Number of whitespace-delimited units in the raw string.
pub fn token_count(s: &str) -> usize {
    s.split_whitespace().count()
}
