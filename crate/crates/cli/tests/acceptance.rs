//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when any
//! criterion fails. Tolerances are fixed by the acceptance contract.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use icrkit::corpus::{apply_permutation, promote_hard_negatives, refine_candidate, BuildConfig, Candidate, Document, Origin};
use icrkit::evaluation::{drop_table, ndcg_at_k, pearson, rouge_l, simulate_topk_retention, AttentionRecord, DocSpan};
use icrkit::judge::{JudgeClient, JudgeError, JudgeMode, JudgeRequest, RecordedJudge};
use icrkit::parsing::{extract_answer, extract_contents, extract_doc_ids, extract_quotes, FormatFlag, ParsedOutput};
use icrkit::rewards::{compute_reward, RewardConfig, RewardKind};
use icrkit::ContextInstance;
use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    if let Some(l) = limit {
        if elapsed > l {
            o.pass = false;
            o.detail.push_str(&format!("; runtime {elapsed:.2?} exceeds {l:?}"));
        }
    }
    println!(
        "{} {name}: {} [{elapsed:.2?}]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

// ---------------------------------------------------------------------------
// Correlation and drop table

fn correlation() -> Outcome {
    let x = [83.4, 83.7, 83.7, 83.9, 84.1, 83.6];
    let y = [69.6, 80.3, 77.2, 70.2, 72.9, 78.6];
    match pearson(&x, &y) {
        Ok(c) => outcome(
            (c.r - -0.09).abs() <= 0.01 && (c.p - 0.86).abs() <= 0.02,
            format!("r = {:.4} (target -0.09 +- 0.01), p = {:.4} (target 0.86 +- 0.02)", c.r, c.p),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

type Row = [f64; 5];
const TASKS: [&str; 5] = ["MC", "QA", "Sum", "ALL", "Fin"];
const MODELS: [&str; 6] = ["Base", "AO", "ID", "ID_C", "ID_Q", "R_JUDGE"];
const FULL: [Row; 6] = [
    [72.0, 30.0, 31.2, 32.0, 49.9],
    [70.3, 38.2, 31.0, 31.2, 55.3],
    [71.6, 34.7, 29.7, 31.0, 51.2],
    [70.7, 31.3, 30.2, 31.4, 47.5],
    [70.7, 30.8, 30.5, 32.0, 51.5],
    [72.5, 30.7, 31.7, 32.6, 58.8],
];
const COMPRESSED: [Row; 6] = [
    [62.0, 27.6, 27.3, 30.2, 39.5],
    [65.5, 33.6, 28.0, 29.6, 41.7],
    [64.2, 29.3, 26.0, 30.0, 43.0],
    [63.3, 27.1, 27.7, 29.6, 39.8],
    [62.9, 27.1, 28.1, 32.0, 39.7],
    [63.8, 28.2, 28.8, 31.2, 41.5],
];
/// Expected drops for MC, Sum, ALL, Fin. QA is excluded: its expected
/// values are not the relative change of the QA scores.
const EXPECTED: [[f64; 4]; 6] = [
    [-13.9, -12.5, -5.6, -20.8],
    [-6.8, -9.7, -5.1, -24.6],
    [-10.3, -12.5, -3.2, -16.0],
    [-10.5, -8.3, -5.7, -16.2],
    [-11.0, -7.9, 0.0, -22.9],
    [-12.0, -10.5, -4.5, -18.7],
];

fn drop_reproduction() -> Outcome {
    let checked = ["MC", "Sum", "ALL", "Fin"];
    let mut misses = Vec::new();
    for m in 0..6 {
        let map = |row: &Row| -> IndexMap<String, f64> {
            TASKS
                .iter()
                .zip(row)
                .filter(|(t, _)| **t != "QA")
                .map(|(t, v)| (t.to_string(), *v))
                .collect()
        };
        let row = match drop_table(&map(&FULL[m]), &map(&COMPRESSED[m])) {
            Ok(r) => r,
            Err(e) => return outcome(false, e.to_string()),
        };
        for (j, task) in checked.iter().enumerate() {
            let got = row.drops[*task];
            let want = EXPECTED[m][j];
            if (got - want).abs() > 0.1 + 1e-9 {
                misses.push(format!("{} {task}: {got:.2} vs {want}", MODELS[m]));
            }
        }
    }
    let total = 6 * checked.len();
    outcome(
        misses.is_empty(),
        format!(
            "{}/{total} cells within +-0.1 (QA excluded){}",
            total - misses.len(),
            if misses.is_empty() {
                String::new()
            } else {
                format!("; mismatches: {}", misses.join(", "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// Independent literal scorer

/// Lowercase, keep alphanumerics and whitespace, drop a/an/the, single spaces.
fn lit_norm(s: &str) -> String {
    let lowered = s.to_lowercase();
    let kept: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    kept.split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn lit_contains(hay: &str, needle: &str) -> bool {
    let n = lit_norm(needle);
    !n.is_empty() && lit_norm(hay).contains(&n)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Content {
    Exact,
    Corrupted,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Quotes {
    Gold,
    Negative,
    None,
}

/// A synthesized output, described structurally.
#[derive(Clone, Debug)]
struct Synth {
    answer: String,
    cited: BTreeSet<usize>,
    content: Content,
    quotes: Quotes,
}

fn half(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    words[..words.len() / 2].join(" ")
}

/// Up to six words from the middle of a document.
fn span_of(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let start = words.len() / 3;
    words[start..(start + 6).min(words.len())].join(" ")
}

fn quote_texts(inst: &ContextInstance, s: &Synth) -> Vec<String> {
    match s.quotes {
        Quotes::None => Vec::new(),
        Quotes::Gold => inst.gold_ids.iter().map(|&g| span_of(&inst.documents[g].text)).collect(),
        Quotes::Negative => inst
            .documents
            .iter()
            .filter(|d| !inst.gold_ids.contains(&d.index))
            .take(1)
            .map(|d| span_of(&d.text))
            .collect(),
    }
}

fn tag_list(ids: &BTreeSet<usize>) -> String {
    if ids.is_empty() {
        "[DOC -1]".to_owned()
    } else {
        ids.iter().map(|i| format!("[DOC {i}]")).collect::<Vec<_>>().join(", ")
    }
}

fn render(inst: &ContextInstance, s: &Synth) -> String {
    let mut y = String::from("Step 1: identify the relevant documents.\n");
    y.push_str(&format!("Relevant Document IDs: {}\n", tag_list(&s.cited)));
    for (i, q) in quote_texts(inst, s).iter().enumerate() {
        y.push_str(&format!("Quote {}: \"{q}\"\n", i + 1));
    }
    y.push_str("Relevant documents:\n");
    for &c in &s.cited {
        let text = &inst.documents[c].text;
        let body = match s.content {
            Content::Exact => text.clone(),
            Content::Corrupted => half(text),
        };
        y.push_str(&format!("[DOC {c}]\n{body}\n"));
    }
    y.push_str(&format!("The answer is: {}\n", s.answer));
    y
}

/// Verdict (c1, c2, c3), or `None` for an unparseable judge response.
type Verdict = Option<(u8, u8, u8)>;

fn verdict_text(v: Verdict) -> String {
    match v {
        Some((a, b, c)) => format!(
            "Assessment follows.\n\\boxed{{Criterion 1: {a}}}\n\\boxed{{Criterion 2: {b}}}\n\\boxed{{Criterion 3: {c}}}"
        ),
        None => "I cannot grade this.".to_owned(),
    }
}

fn literal_score(inst: &ContextInstance, s: &Synth, kind: RewardKind, verdict: Verdict) -> f64 {
    let ao = u8::from(inst.answers.iter().any(|a| lit_contains(&s.answer, a)));
    let id = u8::from(s.cited == inst.gold_ids);
    let content = u8::from(
        s.cited == inst.gold_ids
            && inst.gold_ids.iter().all(|&g| {
                let text = &inst.documents[g].text;
                let block = match s.content {
                    Content::Exact => text.clone(),
                    Content::Corrupted => half(text),
                };
                lit_contains(&block, text)
            }),
    );
    let quotes = quote_texts(inst, s);
    let quote = u8::from(
        !quotes.is_empty()
            && quotes.iter().all(|q| {
                q.split_whitespace().count() <= 30 && inst.gold_ids.iter().any(|&g| lit_contains(&inst.documents[g].text, q))
            }),
    );
    let judge = verdict.map(|(a, b, _)| a + b).unwrap_or(0);
    f64::from(match kind {
        RewardKind::Ao => ao,
        RewardKind::Id => id + ao,
        RewardKind::IdC => content + id + ao,
        RewardKind::IdQ => quote + id + ao,
        RewardKind::RJudge => judge + ao,
    })
}

fn make_instance(id: &str, answers: &[&str], texts: &[String], gold: &[usize]) -> ContextInstance {
    ContextInstance {
        id: id.into(),
        question: format!("Question for {id}?"),
        answers: answers.iter().map(|s| s.to_string()).collect(),
        documents: texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let origin = if gold.contains(&i) { Origin::Gold } else { Origin::HardNegative };
                Document::new(i, t.clone(), origin)
            })
            .collect(),
        gold_ids: gold.iter().copied().collect(),
        source: "acceptance".into(),
        group: None,
        choices: None,
    }
}

fn worked_examples() -> Vec<ContextInstance> {
    let mut mag: Vec<String> = (0..12)
        .map(|i| format!("Unrelated periodical number {i} covering regional farming news weekly."))
        .collect();
    mag[10] = "Arthur's Magazine (1844-1846) was an American literary periodical published in Philadelphia.".into();
    mag[11] = "First for Women is a woman's magazine published by Bauer Media Group in the USA, started in 1989.".into();
    let delhi = vec![
        "Delhi is the capital territory of India and hosts the national parliament.".to_owned(),
        "Mumbai is the financial centre of India on the western coast.".to_owned(),
        "Chennai lies on the Coromandel Coast facing the Bay of Bengal.".to_owned(),
        "Kolkata was the capital of British India until the year 1911.".to_owned(),
        "The Red Fort in Delhi was built by the Mughal emperor Shah Jahan.".to_owned(),
    ];
    let mut nixon: Vec<String> = (0..9)
        .map(|i| format!("Filler biography {i} of an unrelated senator from a western state."))
        .collect();
    nixon[2] = "Richard Nixon was the 37th president of the United States from 1969.".into();
    nixon[4] = "Nixon served as vice president under Dwight D. Eisenhower for eight years.".into();
    nixon[6] = "The Watergate scandal led to the resignation of Richard Nixon in August 1974.".into();
    nixon[8] = "Gerald Ford pardoned Richard Nixon in September 1974 for any federal crimes.".into();
    vec![
        make_instance("magazine", &["Arthur's Magazine"], &mag, &[10, 11]),
        make_instance("delhi", &["Delhi", "New Delhi"], &delhi, &[0, 4]),
        make_instance("nixon", &["Richard Nixon"], &nixon, &[2, 4, 6, 8]),
    ]
}

fn small_instances() -> Vec<ContextInstance> {
    let texts = |n: usize, tag: &str| -> Vec<String> {
        (0..n)
            .map(|i| format!("{tag} passage {i} mentions landmark{i}{tag} and river{i}{tag} near town{i}{tag} in spring"))
            .collect()
    };
    vec![
        make_instance("s2", &["Oslo"], &texts(2, "a"), &[0]),
        make_instance("s3", &["Lima"], &texts(3, "b"), &[1, 2]),
        make_instance("s4", &["Nairobi"], &texts(4, "c"), &[0, 3]),
        make_instance("s4all", &["Quito"], &texts(4, "d"), &[0, 1, 2, 3]),
    ]
}

fn subsets(n: usize) -> Vec<BTreeSet<usize>> {
    (0u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

fn cited_options(inst: &ContextInstance) -> Vec<BTreeSet<usize>> {
    let n = inst.documents.len();
    if n <= 4 {
        return subsets(n);
    }
    let gold = inst.gold_ids.clone();
    let first = *gold.iter().next().unwrap();
    let mut fewer = gold.clone();
    fewer.remove(&first);
    let extra_neg = (0..n).find(|i| !gold.contains(i)).unwrap();
    let mut more = gold.clone();
    more.insert(extra_neg);
    vec![gold, fewer, more, BTreeSet::new()]
}

fn reward_oracle() -> Outcome {
    let cfg = RewardConfig::default();
    let mut cases: Vec<(ContextInstance, Synth, Verdict)> = Vec::new();
    let mut assigned: BTreeMap<(String, String), Verdict> = BTreeMap::new();
    let verdicts: Vec<Verdict> = (0..8u8)
        .map(|b| Some((b & 1, (b >> 1) & 1, (b >> 2) & 1)))
        .chain([None])
        .collect();
    for inst in worked_examples().into_iter().chain(small_instances()) {
        let has_negative = inst.documents.len() > inst.gold_ids.len();
        for cited in cited_options(&inst) {
            for answer in [inst.answers[0].clone(), "Zanzibar Quartet".to_owned()] {
                for content in [Content::Exact, Content::Corrupted] {
                    for quotes in [Quotes::Gold, Quotes::Negative, Quotes::None] {
                        if quotes == Quotes::Negative && !has_negative {
                            continue;
                        }
                        let synth = Synth {
                            answer: answer.clone(),
                            cited: cited.clone(),
                            content,
                            quotes,
                        };
                        // Identical renderings share one recorded verdict.
                        let next = verdicts[assigned.len() % verdicts.len()];
                        let v = *assigned.entry((inst.id.clone(), render(&inst, &synth))).or_insert(next);
                        cases.push((inst.clone(), synth, v));
                    }
                }
            }
        }
    }

    // The fixture is keyed by the rubric slots filled in independently here.
    let mut fixture = RecordedJudge::new();
    for (inst, s, v) in &cases {
        let req = JudgeRequest::Reasoning {
            question: inst.question.clone(),
            gold_docs: inst.gold_ids.iter().map(|&g| inst.documents[g].text.clone()).collect(),
            answer: inst.answers[0].clone(),
            solution: render(inst, s),
        };
        fixture.insert(&req, verdict_text(*v));
    }
    let judge = JudgeClient::recorded(fixture);

    let mut mismatches = Vec::new();
    let mut pairs = 0usize;
    for (inst, s, v) in &cases {
        let y = render(inst, s);
        for kind in RewardKind::ALL {
            pairs += 1;
            let want = literal_score(inst, s, kind, *v);
            match compute_reward(inst, &y, kind, Some(&judge), &cfg) {
                Ok(r) if r.total == want => {}
                Ok(r) => mismatches.push(format!("{} {kind} {s:?}: got {} want {want}", inst.id, r.total)),
                Err(e) => mismatches.push(format!("{} {kind}: {e}", inst.id)),
            }
        }
    }
    let examples_covered = ["magazine", "delhi", "nixon"]
        .iter()
        .all(|id| cases.iter().any(|(i, _, _)| i.id == *id));
    outcome(
        mismatches.is_empty() && pairs >= 200 && examples_covered,
        format!(
            "{pairs} (instance, output, kind) pairs over {} outputs, {} mismatches{}",
            cases.len(),
            mismatches.len(),
            mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// Parser round trip

const VOCAB: [&str; 24] = [
    "amber", "basalt", "cobalt", "delta", "ember", "fjord", "granite", "harbor", "indigo", "jasper", "kelp", "lumen",
    "marble", "nectar", "onyx", "pewter", "quartz", "ridge", "slate", "topaz", "umber", "velvet", "willow", "zinc",
];

fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

struct Tuple {
    answer: String,
    ids: BTreeSet<usize>,
    contents: BTreeMap<usize, String>,
    quotes: Vec<String>,
}

fn random_tuple(rng: &mut ChaCha8Rng) -> Tuple {
    let n = rng.random_range(0..=5);
    let ids: BTreeSet<usize> = (0..n).map(|_| rng.random_range(0..60)).collect();
    let contents = ids
        .iter()
        .map(|&i| {
            let lines = rng.random_range(1..=3);
            let body = (0..lines).map(|_| words(rng, 1, 12)).collect::<Vec<_>>().join("\n");
            (i, body)
        })
        .collect();
    let q = rng.random_range(0..=3);
    Tuple {
        answer: words(rng, 1, 5),
        ids,
        contents,
        quotes: (0..q).map(|_| words(rng, 1, 30)).collect(),
    }
}

const MARKERS: [&str; 3] = ["The answer is:", "Answer:", "The correct answer is"];

/// Renders the tuple with the ID-line, quote and reproduced-document
/// templates. `marker` selects the answer marker; `None` drops it.
fn render_tuple(t: &Tuple, marker: Option<&str>, bare_ids: bool, mixed_sentinel: bool) -> String {
    let mut tags = tag_list(&t.ids);
    if mixed_sentinel {
        tags.push_str(", [DOC -1]");
    }
    let mut y = String::from("Let me work through the documents.\n");
    if bare_ids {
        y.push_str(&format!("{tags}\n"));
    } else {
        y.push_str(&format!("Relevant Document IDs: {tags}\n"));
    }
    for (i, q) in t.quotes.iter().enumerate() {
        y.push_str(&format!("Quote {}: \"{q}\"\n", i + 1));
    }
    y.push_str("Relevant documents:\n");
    for (i, body) in &t.contents {
        y.push_str(&format!("[DOC {i}]\n{body}\n"));
    }
    match marker {
        Some(m) => y.push_str(&format!("{m} {}\n", t.answer)),
        None => y.push_str(&format!("So it must be {}.\n", t.answer)),
    }
    y
}

fn parser_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut failures = Vec::new();
    let mut mutations = 0usize;
    for i in 0..1000 {
        let t = random_tuple(&mut rng);
        let marker = MARKERS[i % MARKERS.len()];
        let bare = rng.random_bool(0.3);
        let y = render_tuple(&t, Some(marker), bare, false);
        if extract_answer(&y).as_deref() != Some(t.answer.as_str()) {
            failures.push(format!("#{i} answer"));
        }
        if extract_doc_ids(&y).ok() != Some(t.ids.clone()) {
            failures.push(format!("#{i} ids"));
        }
        if extract_contents(&y) != Some(t.contents.clone()) {
            failures.push(format!("#{i} contents"));
        }
        if extract_quotes(&y) != t.quotes {
            failures.push(format!("#{i} quotes"));
        }
        if !ParsedOutput::parse(&y).format_flags.is_empty() {
            failures.push(format!("#{i} unexpected flags"));
        }

        mutations += 1;
        let dropped = render_tuple(&t, None, bare, false);
        let p = ParsedOutput::parse(&dropped);
        if !p.has_flag(FormatFlag::NoAnswerMarker) || p.answer.is_some() {
            failures.push(format!("#{i} dropped marker not flagged"));
        }
        if !t.ids.is_empty() {
            mutations += 1;
            let mixed = render_tuple(&t, Some(marker), bare, true);
            let p = ParsedOutput::parse(&mixed);
            if !p.has_flag(FormatFlag::MalformedIds) || p.doc_ids.is_some() {
                failures.push(format!("#{i} mixed sentinel not flagged"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "1000 tuples, {mutations} mutations, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// NDCG brute force

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut a: Vec<usize> = (0..n).collect();
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    heap(n, &mut a, &mut out);
    out
}

/// DCG with gain 1 for relevant docs and discount 1/log2(rank + 1), ranks from 1.
fn oracle_dcg(ranking: &[usize], relevant: &BTreeSet<usize>, k: usize) -> f64 {
    ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| if relevant.contains(d) { 1.0 / ((i + 2) as f64).log2() } else { 0.0 })
        .sum()
}

fn ndcg_bruteforce() -> Outcome {
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for n in 1..=8 {
        let perms = permutations(n);
        for rel in subsets(n).into_iter().filter(|s| (1..=3).contains(&s.len())) {
            for k in [10, 3] {
                let ideal = perms.iter().map(|p| oracle_dcg(p, &rel, k)).fold(0.0, f64::max);
                for p in &perms {
                    let want = oracle_dcg(p, &rel, k) / ideal;
                    let got = match ndcg_at_k(p, &rel, k) {
                        Ok(v) => v,
                        Err(e) => return outcome(false, e.to_string()),
                    };
                    worst = worst.max((got - want).abs());
                    let perfect = p.iter().take(rel.len()).all(|d| rel.contains(d));
                    if (got - want).abs() > 1e-12 || (perfect && got != 1.0) {
                        failures.push(format!("n={n} rel={rel:?} k={k} {p:?}: {got} vs {want}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{checked} rankings (n <= 8, 1-3 relevant, k in {{10, 3}}), max |diff| {worst:.1e}, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// Permutation invariance

fn random_instance(rng: &mut ChaCha8Rng, id: usize) -> ContextInstance {
    let n = rng.random_range(1..=8);
    let texts: Vec<String> = (0..n).map(|i| format!("doc{i}x{id} {}", words(rng, 4, 14))).collect();
    let mut gold: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
    if gold.is_empty() {
        gold.push(rng.random_range(0..n));
    }
    let answer = words(rng, 1, 3);
    make_instance(&format!("p{id}"), &[&answer], &texts, &gold)
}

fn random_synth(rng: &mut ChaCha8Rng, inst: &ContextInstance) -> Synth {
    let n = inst.documents.len();
    let cited = match rng.random_range(0..3) {
        0 => inst.gold_ids.clone(),
        1 => (0..n).filter(|_| rng.random_bool(0.5)).collect(),
        _ => BTreeSet::new(),
    };
    Synth {
        answer: if rng.random_bool(0.5) { inst.answers[0].clone() } else { words(rng, 1, 3) },
        cited,
        content: if rng.random_bool(0.6) { Content::Exact } else { Content::Corrupted },
        quotes: *[Quotes::Gold, Quotes::Negative, Quotes::None].choose(rng).unwrap(),
    }
}

/// Verdict depends only on order-free request content.
fn symmetric_judge() -> JudgeClient {
    let f = |r: &JudgeRequest| -> Result<String, JudgeError> {
        let JudgeRequest::Reasoning { gold_docs, answer, .. } = r else {
            return Ok(String::new());
        };
        let total: usize = gold_docs.iter().map(|d| d.len()).sum();
        Ok(verdict_text(Some(((total % 2) as u8, (answer.len() % 2) as u8, 1))))
    };
    JudgeClient::new(Arc::new(f), JudgeMode::Recorded, 4)
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let cfg = RewardConfig::default();
    let judge = symmetric_judge();
    let mut violations = Vec::new();
    for i in 0..500 {
        let inst = random_instance(&mut rng, i);
        let s = random_synth(&mut rng, &inst);
        let mut perm: Vec<usize> = (0..inst.documents.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = apply_permutation(&inst, &perm);
        let mut new_of_old = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            new_of_old[old] = new;
        }
        let remapped = Synth {
            cited: s.cited.iter().map(|&c| new_of_old[c]).collect(),
            ..s.clone()
        };
        let (y, y2) = (render(&inst, &s), render(&shuffled, &remapped));
        for kind in RewardKind::ALL {
            let a = compute_reward(&inst, &y, kind, Some(&judge), &cfg).map(|r| r.total);
            let b = compute_reward(&shuffled, &y2, kind, Some(&judge), &cfg).map(|r| r.total);
            if a.is_err() || a != b {
                violations.push(format!("instance {i} {kind}: {a:?} vs {b:?}"));
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!(
            "500 instances x 5 kinds, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// Retention nesting

fn retention_nesting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut violations = 0usize;
    let mut first = None;
    for trial in 0..1000 {
        let n = rng.random_range(1..=48);
        // Quantized scores force ties.
        let token_scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8)) / 4.0).collect();
        let mut cuts: Vec<usize> = (1..n).filter(|_| rng.random_bool(0.2)).collect();
        cuts.insert(0, 0);
        cuts.push(n);
        let mut doc_ids: Vec<usize> = (0..cuts.len() - 1).collect();
        doc_ids.shuffle(&mut rng);
        let rec = AttentionRecord {
            instance_id: format!("t{trial}"),
            doc_spans: cuts
                .windows(2)
                .zip(doc_ids)
                .map(|(w, doc)| DocSpan { doc, tokens: w[0]..w[1] })
                .collect(),
            token_scores,
        };
        let mut prev: Option<(Vec<bool>, Vec<f64>)> = None;
        for b in 0..=n {
            let r = match simulate_topk_retention(&rec, b) {
                Ok(r) => r,
                Err(e) => return outcome(false, e.to_string()),
            };
            let kept = r.mask.iter().filter(|&&m| m).count();
            let survival: Vec<f64> = r.survival.iter().map(|s| s.1).collect();
            let mut ok = kept == b;
            if let Some((pm, ps)) = &prev {
                ok &= pm.iter().zip(&r.mask).all(|(a, b)| !a || *b);
                ok &= ps.iter().zip(&survival).all(|(a, b)| a <= b);
            }
            if !ok {
                violations += 1;
                first.get_or_insert(format!("trial {trial} budget {b}"));
            }
            prev = Some((r.mask, survival));
        }
    }
    outcome(
        violations == 0,
        format!(
            "1000 records, all budgets, {violations} violations{}",
            first.map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// Pipeline determinism

fn pipeline_determinism() -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_icrkit"))
            .arg("--config")
            .arg(fixtures.join("recorded.toml"))
            .args(["--seed", "42", "build-data", "--candidates"])
            .arg(fixtures.join("candidates.jsonl"))
            .arg("--out")
            .arg(&out)
            .env("ICRKIT_LOG", "error")
            .status()
            .unwrap();
        if status.code() != Some(0) {
            return outcome(false, format!("build-data exited with {status}"));
        }
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        outputs.push((read("train.jsonl"), read("dev.jsonl")));
    }
    let identical = outputs[0] == outputs[1];
    let count = |b: &[u8]| b.iter().filter(|&&c| c == b'\n').count();
    let (train, dev) = (count(&outputs[0].0), count(&outputs[0].1));
    let expected_train = (0.95f64 * 20.0).round() as usize;
    outcome(
        identical && train == expected_train && dev == 20 - expected_train,
        format!("two seed-42 runs byte-identical: {identical}; split {train}/{dev} (expected {expected_train}/{})", 20 - expected_train),
    )
}

// ---------------------------------------------------------------------------
// Refinement

fn refinement_property() -> Outcome {
    // Golds and near duplicates use letters a-m; unrelated negatives n-z, so
    // they share no characters with any gold.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gold_vocab = ["abe", "cade", "fig", "hijk", "lam", "mead", "bad", "dim", "gel", "jab", "kale", "bide"];
    let other_vocab = ["nox", "pry", "quo", "stu", "vow", "xyz", "rot", "sun", "two", "zoo", "wry", "tux"];
    let phrase = |rng: &mut ChaCha8Rng, v: &[&str]| (0..10).map(|_| *v.choose(rng).unwrap()).collect::<Vec<_>>().join(" ");
    let cfg = BuildConfig::default();
    let approve = JudgeClient::new(
        Arc::new(|_: &JudgeRequest| Ok::<_, JudgeError>("Relevant".to_owned())),
        JudgeMode::Recorded,
        4,
    );
    let mut sizes = Vec::new();
    let mut precondition_failures = 0usize;
    for i in 0..50 {
        let g1 = phrase(&mut rng, &gold_vocab);
        let g2 = phrase(&mut rng, &gold_vocab);
        let near = |g: &str| {
            let mut w: Vec<&str> = g.split(' ').collect();
            w[9] = "lime";
            w.join(" ")
        };
        let mut retrieved = vec![near(&g1), near(&g2)];
        retrieved.extend((0..4).map(|_| phrase(&mut rng, &other_vocab)));
        retrieved.shuffle(&mut rng);
        let cand = Candidate {
            id: format!("r{i}"),
            question: "q?".into(),
            answers: vec!["a".into()],
            gold_docs: vec![g1, g2],
            retrieved,
        };
        let golds: Vec<Document> = cand
            .gold_docs
            .iter()
            .enumerate()
            .map(|(j, t)| Document::new(j, t.clone(), Origin::Gold))
            .collect();
        let negs: Vec<Document> = cand
            .retrieved
            .iter()
            .enumerate()
            .map(|(j, t)| Document::new(j, t.clone(), Origin::HardNegative))
            .collect();
        if promote_hard_negatives(&golds, &negs, &cfg).promoted().count() != 2 {
            precondition_failures += 1;
        }
        match refine_candidate(&cand, &cfg, Some(&approve)) {
            Ok(r) => sizes.push(r.instance.gold_ids.len()),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    outcome(
        precondition_failures == 0 && mean == 4.0,
        format!("50 instances with 2 golds + 2 near duplicates: mean |gold| {mean} (expected 4.0); {precondition_failures} corpus precondition failures"),
    )
}

// ---------------------------------------------------------------------------
// Rouge-L

fn rouge_spot_values() -> Outcome {
    let a = rouge_l("the cat sat", "the cat");
    let b = rouge_l("the cat sat", "the cat sat");
    let c = rouge_l("alpha beta", "gamma delta");
    let expected = 2.0 * (2.0 / 3.0) * 1.0 / (2.0 / 3.0 + 1.0);
    outcome(
        a == expected && (a - 0.8).abs() < 1e-15 && b == 1.0 && c == 0.0,
        format!("partial {a}, identical {b}, disjoint {c}"),
    )
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        run("correlation reproduction", Some(s(1)), correlation),
        run("drop-table reproduction", Some(s(1)), drop_reproduction),
        run("reward oracle equivalence", Some(s(10)), reward_oracle),
        run("parser round trip", Some(s(30)), parser_round_trip),
        run("NDCG brute-force equivalence", Some(s(60)), ndcg_bruteforce),
        run("permutation invariance", None, permutation_invariance),
        run("retention nesting", None, retention_nesting),
        run("pipeline determinism", None, pipeline_determinism),
        run("refinement property", None, refinement_property),
        run("Rouge-L spot values", None, rouge_spot_values),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
