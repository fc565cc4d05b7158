//! Reward scoring shared by the batch command and the service.

use std::collections::BTreeMap;
use std::path::PathBuf;

use icrkit::corpus::ContextInstance;
use icrkit::judge::JudgeClient;
use icrkit::records::{to_jsonl, PredictionRecord, RewardRequest, RewardResponse};
use icrkit::rewards::{compute_reward, RewardConfig, RewardKind};
use indexmap::IndexMap;
use serde::Serialize;

use crate::{ensure_dir, load_instances, open_jsonl, write_json, CliError, Manifest, Outcome, RunConfig};

/// Immutable state shared by every scoring worker.
pub struct Scorer {
    pub corpus: BTreeMap<String, ContextInstance>,
    pub judge: Option<JudgeClient>,
    pub rewards: RewardConfig,
}

impl Scorer {
    pub fn score(&self, req: &RewardRequest) -> RewardResponse {
        let inst = match req.resolve(&self.corpus) {
            Ok(i) => i,
            Err(e) => return RewardResponse::error(Some(req.request_id.clone()), None, e.to_string()),
        };
        match compute_reward(&inst, &req.output_text, req.kind, self.judge.as_ref(), &self.rewards) {
            Ok(r) => RewardResponse::ok(&req.request_id, r),
            Err(e) => RewardResponse::error(Some(req.request_id.clone()), None, e.to_string()),
        }
    }

    /// Scores one raw request line. Malformed lines become error responses
    /// carrying the line number and, when recoverable, the request id.
    pub fn score_line(&self, line_no: usize, line: &str) -> RewardResponse {
        match serde_json::from_str::<RewardRequest>(line) {
            Ok(req) => self.score(&req),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("request_id").and_then(|r| r.as_str()).map(str::to_owned));
                RewardResponse::error(id, Some(line_no), format!("malformed request: {e}"))
            }
        }
    }
}

pub enum RewardInput {
    Predictions { path: PathBuf, kinds: Vec<RewardKind> },
    Requests(PathBuf),
}

pub struct RewardArgs {
    pub instances: PathBuf,
    pub input: RewardInput,
    pub out: PathBuf,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct KindSummary {
    pub count: usize,
    pub mean_total: f64,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct RewardSummary {
    pub requests: usize,
    pub errors: usize,
    pub per_kind: IndexMap<String, KindSummary>,
}

pub fn summarize(requests: &[RewardRequest], responses: &[RewardResponse], parse_errors: usize) -> RewardSummary {
    let mut per_kind: IndexMap<String, (usize, f64)> = IndexMap::new();
    for (req, resp) in requests.iter().zip(responses) {
        if let Some(t) = resp.total {
            let e = per_kind.entry(req.kind.as_str().to_owned()).or_default();
            e.0 += 1;
            e.1 += t;
        }
    }
    RewardSummary {
        requests: requests.len() + parse_errors,
        errors: responses.iter().filter(|r| r.is_error()).count() + parse_errors,
        per_kind: per_kind
            .into_iter()
            .map(|(k, (n, sum))| {
                (
                    k,
                    KindSummary {
                        count: n,
                        mean_total: sum / n as f64,
                    },
                )
            })
            .collect(),
    }
}

pub fn run(cfg: &RunConfig, args: &RewardArgs) -> Result<Outcome, CliError> {
    let corpus = load_instances(&args.instances)?;
    let (requests, mut line_errors, input_path) = match &args.input {
        RewardInput::Predictions { path, kinds } => {
            if kinds.is_empty() {
                return Err(CliError::Config("--kind is required with --predictions".into()));
            }
            let lines = open_jsonl::<PredictionRecord>(path)?;
            let reqs: Vec<RewardRequest> = lines
                .records
                .iter()
                .flat_map(|(_, p)| {
                    kinds.iter().map(move |k| RewardRequest {
                        request_id: format!("{}:{}", p.id, k.as_str()),
                        instance: None,
                        instance_id: Some(p.id.clone()),
                        output_text: p.output.clone(),
                        kind: *k,
                    })
                })
                .collect();
            let errs: Vec<RewardResponse> = lines
                .errors
                .iter()
                .map(|e| RewardResponse::error(None, None, e.to_string()))
                .collect();
            (reqs, errs, path)
        }
        RewardInput::Requests(path) => {
            let lines = open_jsonl::<RewardRequest>(path)?;
            let errs = lines
                .errors
                .iter()
                .map(|e| RewardResponse::error(None, None, e.to_string()))
                .collect();
            (lines.records.into_iter().map(|(_, r)| r).collect(), errs, path)
        }
    };
    let judge = cfg.judge_client()?;
    if judge.is_none() && requests.iter().any(|r| r.kind == RewardKind::RJudge) {
        return Err(CliError::Config("R_JUDGE requests need a judge (set judge.mode)".into()));
    }
    let manifest = Manifest::new("reward", cfg, &[&args.instances, input_path])?;
    let scorer = Scorer {
        corpus,
        judge,
        rewards: cfg.reward_config(),
    };
    let responses = crate::build::parallel_map(&requests, cfg.workers, |r| scorer.score(r));
    let summary = summarize(&requests, &responses, line_errors.len());

    let out = ensure_dir(&args.out)?;
    let mut all = responses;
    all.append(&mut line_errors);
    std::fs::write(out.join("rewards.jsonl"), to_jsonl(&all))?;
    write_json(&out.join("summary.json"), &summary)?;
    manifest.write(&out)?;
    for r in all.iter().filter(|r| r.is_error()) {
        log::warn!("{}: {}", r.request_id.as_deref().unwrap_or("-"), r.error.as_deref().unwrap_or(""));
    }
    Ok(Outcome::from_failures(summary.errors))
}
