//! Rewrites `fixtures/judge.jsonl`. Run with
//! `cargo test -p icrkit-cli --test regenerate_fixtures -- --ignored`.

use std::path::Path;
use std::sync::{Arc, Mutex};

use icrkit::corpus::{refine_candidate, BuildConfig, Candidate};
use icrkit::judge::{JudgeClient, JudgeMode, JudgeRequest, RecordedJudge};
use icrkit::matching::{jaccard_similarity, NormalizationRules};
use icrkit::records::{read_jsonl, InstanceRecord, PredictionRecord};
use icrkit::rewards::judge_request;
use icrkit::ContextInstance;

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"))
}

/// Approves a promoted negative when it shares most of its words with a gold.
fn promotion_response(req: &JudgeRequest) -> String {
    let JudgeRequest::Promotion { gold_docs, candidate, .. } = req else {
        unreachable!()
    };
    let rules = NormalizationRules::lexical();
    let best = gold_docs
        .iter()
        .map(|g| jaccard_similarity(g, candidate, &rules))
        .fold(0.0, f64::max);
    if best >= 0.5 { "Relevant" } else { "Irrelevant" }.to_owned()
}

#[test]
#[ignore]
fn regenerate_judge_fixtures() {
    let mut recorded = RecordedJudge::new();

    let seen: Arc<Mutex<Vec<JudgeRequest>>> = Arc::default();
    let sink = Arc::clone(&seen);
    let recorder = JudgeClient::new(
        Arc::new(move |r: &JudgeRequest| {
            sink.lock().unwrap().push(r.clone());
            Ok(promotion_response(r))
        }),
        JudgeMode::Recorded,
        4,
    );
    let file = std::fs::File::open(fixtures().join("candidates.jsonl")).unwrap();
    let cands = read_jsonl::<Candidate>(std::io::BufReader::new(file)).unwrap();
    for (_, c) in &cands.records {
        refine_candidate(c, &BuildConfig::default(), Some(&recorder)).unwrap();
    }
    for r in seen.lock().unwrap().iter() {
        recorded.insert(r, promotion_response(r));
    }

    let file = std::fs::File::open(fixtures().join("instances.jsonl")).unwrap();
    let insts: Vec<ContextInstance> = read_jsonl::<InstanceRecord>(std::io::BufReader::new(file))
        .unwrap()
        .records
        .into_iter()
        .map(|(_, r)| ContextInstance::try_from(r).unwrap())
        .collect();
    let file = std::fs::File::open(fixtures().join("predictions.jsonl")).unwrap();
    let preds = read_jsonl::<PredictionRecord>(std::io::BufReader::new(file)).unwrap();
    for (i, (_, p)) in preds.records.iter().enumerate() {
        let inst = insts.iter().find(|x| x.id == p.id).unwrap();
        let (c1, c2) = (u8::from(i % 2 == 0), u8::from(i % 3 != 0));
        let text = format!(
            "The solution is evaluated below.\n\\boxed{{Criterion 1: {c1}}}\n\\boxed{{Criterion 2: {c2}}}\n\\boxed{{Criterion 3: 1}}"
        );
        recorded.insert(&judge_request(inst, &p.output), text);
        let score = JudgeRequest::Score100 {
            question: inst.question.clone(),
            reference: inst.answers[0].clone(),
            prediction: p.output.clone(),
        };
        recorded.insert(&score, format!("Score: [[{}]]", 10 * (i + 1)));
    }
    recorded.save(&fixtures().join("judge.jsonl")).unwrap();
}
