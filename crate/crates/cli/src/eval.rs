//! `eval`: per-instance benchmark scores, grouped aggregates, and optional
//! attention ranking / retention sections.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use icrkit::corpus::ContextInstance;
use icrkit::evaluation::{
    aggregate, doc_attention_scores, group_scores, mc_accuracy, ndcg_at_k, rouge_l, simulate_topk_retention,
    subem_score, AttentionRecord, EvalReport, InstanceScore, RankingSummary, RetentionSummary,
};
use icrkit::judge::{parse_score100, JudgeClient, JudgeRequest};
use icrkit::records::{AttentionDumpRecord, PredictionRecord};
use serde::Serialize;

use crate::build::parallel_map;
use crate::{ensure_dir, load_instances, open_jsonl, write_json, CliError, Manifest, Outcome, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Subem,
    Mc,
    RougeL,
    /// 0-100 judge score, rescaled to [0, 1].
    Judge100,
}

pub struct EvalArgs {
    pub instances: PathBuf,
    pub predictions: Option<PathBuf>,
    pub metric: Option<Metric>,
    pub attention: Option<PathBuf>,
    pub ndcg: bool,
    /// Fraction of each context's tokens kept in the retention simulation.
    pub retention_budget: Option<f64>,
    pub run_id: String,
    pub out: PathBuf,
}

fn group_of(inst: &ContextInstance) -> String {
    inst.group.clone().unwrap_or_else(|| "all".to_owned())
}

fn score_one(
    metric: Metric,
    inst: &ContextInstance,
    prediction: Option<&str>,
    judge: Option<&JudgeClient>,
) -> InstanceScore {
    let mut s = InstanceScore {
        id: inst.id.clone(),
        group: group_of(inst),
        score: 0.0,
        flags: Vec::new(),
    };
    let Some(pred) = prediction else {
        s.flags.push("missing_prediction".into());
        return s;
    };
    let reference = inst.answers.first().map(String::as_str).unwrap_or_default();
    match metric {
        Metric::Subem => match subem_score(pred, &inst.answers) {
            Ok(v) => s.score = f64::from(v),
            Err(e) => s.flags.push(format!("error: {e}")),
        },
        Metric::RougeL => s.score = rouge_l(pred, reference),
        Metric::Mc => {
            let choices = inst.choices.clone().unwrap_or_default();
            let gold = reference.trim().chars().next().unwrap_or('?');
            match mc_accuracy(pred, &choices, gold) {
                Ok(o) => {
                    s.score = f64::from(o.score);
                    s.flags.extend(o.flags);
                }
                Err(e) => s.flags.push(format!("error: {e}")),
            }
        }
        Metric::Judge100 => {
            let req = JudgeRequest::Score100 {
                question: inst.question.clone(),
                reference: reference.to_owned(),
                prediction: pred.to_owned(),
            };
            match judge.map(|j| j.ask(&req)) {
                Some(Ok(text)) => match parse_score100(&text) {
                    Some(v) => s.score = v / 100.0,
                    None => s.flags.push("judge_score_unparseable".into()),
                },
                Some(Err(e)) => s.flags.push(format!("error: {e}")),
                None => s.flags.push("error: no judge".into()),
            }
        }
    }
    s
}

fn is_failure(s: &InstanceScore) -> bool {
    s.flags.iter().any(|f| f == "missing_prediction" || f.starts_with("error"))
}

pub fn run(cfg: &RunConfig, args: &EvalArgs) -> Result<Outcome, CliError> {
    if (args.ndcg || args.retention_budget.is_some()) && args.attention.is_none() {
        return Err(CliError::Config("NDCG and retention analyses need --attention".into()));
    }
    if args.metric.is_some() != args.predictions.is_some() {
        return Err(CliError::Config("--metric and --predictions go together".into()));
    }
    if args.metric.is_none() && args.attention.is_none() {
        return Err(CliError::Config("nothing to evaluate: give --metric/--predictions or --attention".into()));
    }
    if let Some(b) = args.retention_budget {
        if !(0.0..=1.0).contains(&b) {
            return Err(CliError::Config("--retention-budget must lie in [0, 1]".into()));
        }
    }
    let judge = match args.metric {
        Some(Metric::Judge100) => Some(
            cfg.judge_client()?
                .ok_or_else(|| CliError::Config("judge100 needs a judge (set judge.mode)".into()))?,
        ),
        _ => None,
    };
    let mut inputs: Vec<&Path> = vec![&args.instances];
    inputs.extend(args.predictions.as_deref());
    inputs.extend(args.attention.as_deref());
    let manifest = Manifest::new("eval", cfg, &inputs)?;
    let corpus = load_instances(&args.instances)?;
    let mut failures = 0usize;
    let mut report = EvalReport {
        run_id: args.run_id.clone(),
        ..Default::default()
    };

    if let (Some(metric), Some(path)) = (args.metric, &args.predictions) {
        let lines = open_jsonl::<PredictionRecord>(path)?;
        failures += lines.errors.len();
        for e in &lines.errors {
            log::warn!("{}: {e}", path.display());
        }
        let mut preds: BTreeMap<String, String> = BTreeMap::new();
        for (line, p) in lines.records {
            if !corpus.contains_key(&p.id) {
                log::warn!("{} line {line}: unknown instance id {}", path.display(), p.id);
                failures += 1;
            } else if preds.insert(p.id.clone(), p.output).is_some() {
                log::warn!("{} line {line}: duplicate prediction for {}", path.display(), p.id);
                failures += 1;
            }
        }
        let insts: Vec<&ContextInstance> = corpus.values().collect();
        let scores = parallel_map(&insts, cfg.workers, |inst| {
            score_one(metric, inst, preds.get(&inst.id).map(String::as_str), judge.as_ref())
        });
        failures += scores.iter().filter(|s| is_failure(s)).count();
        report.metric = Some(serde_json::to_value(metric).unwrap().as_str().unwrap().to_owned());
        report.aggregate = Some(aggregate(&group_scores(&scores)).map_err(|e| CliError::Validation(e.to_string()))?);
        report.per_instance = scores;
    }

    if let Some(path) = &args.attention {
        let lines = open_jsonl::<AttentionDumpRecord>(path)?;
        failures += lines.errors.len();
        let mut records: BTreeMap<String, AttentionRecord> = BTreeMap::new();
        for (line, r) in lines.records {
            match AttentionRecord::try_from(r) {
                Ok(rec) if corpus.contains_key(&rec.instance_id) => {
                    records.insert(rec.instance_id.clone(), rec);
                }
                Ok(rec) => {
                    log::warn!("{} line {line}: unknown instance id {}", path.display(), rec.instance_id);
                    failures += 1;
                }
                Err(e) => {
                    log::warn!("{} line {line}: {e}", path.display());
                    failures += 1;
                }
            }
        }
        if args.ndcg {
            let mut per = Vec::new();
            for (id, rec) in &records {
                let inst = &corpus[id];
                let mut s = InstanceScore {
                    id: id.clone(),
                    group: group_of(inst),
                    score: 0.0,
                    flags: Vec::new(),
                };
                let ranking: Result<Vec<usize>, _> = doc_attention_scores(rec, cfg.attention_aggregation)
                    .map(|v| v.into_iter().map(|(d, _)| d).collect());
                match ranking.and_then(|r| ndcg_at_k(&r, &inst.gold_ids, cfg.ndcg_k)) {
                    Ok(v) => s.score = v,
                    Err(e) => {
                        s.flags.push(format!("error: {e}"));
                        failures += 1;
                    }
                }
                per.push(s);
            }
            let agg = aggregate(&group_scores(&per)).map_err(|e| CliError::Validation(e.to_string()))?;
            report.ranking = Some(RankingSummary {
                k: cfg.ndcg_k,
                per_instance: per,
                aggregate: agg,
            });
        }
        if let Some(frac) = args.retention_budget {
            let mut per = Vec::new();
            for (id, rec) in &records {
                let inst = &corpus[id];
                let budget = (frac * rec.token_scores.len() as f64).round() as usize;
                let mut s = InstanceScore {
                    id: id.clone(),
                    group: group_of(inst),
                    score: 0.0,
                    flags: Vec::new(),
                };
                match simulate_topk_retention(rec, budget) {
                    Ok(r) => {
                        let gold: Vec<f64> = r
                            .survival
                            .iter()
                            .filter(|(d, _)| inst.gold_ids.contains(d))
                            .map(|(_, v)| *v)
                            .collect();
                        if gold.is_empty() {
                            s.flags.push("no_gold_span".into());
                        } else {
                            s.score = gold.iter().sum::<f64>() / gold.len() as f64;
                        }
                    }
                    Err(e) => {
                        s.flags.push(format!("error: {e}"));
                        failures += 1;
                    }
                }
                per.push(s);
            }
            let agg = aggregate(&group_scores(&per)).map_err(|e| CliError::Validation(e.to_string()))?;
            report.retention = Some(RetentionSummary {
                budget_fraction: frac,
                gold_survival: per,
                aggregate: agg,
            });
        }
    }

    let out = ensure_dir(&args.out)?;
    write_json(&out.join("eval_report.json"), &report)?;
    for (name, table) in report.tsv_tables() {
        std::fs::write(out.join(format!("{name}.tsv")), table)?;
    }
    manifest.write(&out)?;
    Ok(Outcome::from_failures(failures))
}
