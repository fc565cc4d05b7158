//! `build-data`: candidates → refine → judge filter → shuffle → length
//! filter → train/dev split.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use icrkit::corpus::{
    filter_by_length, refine_candidate, split_dataset, Candidate, ContextInstance, JudgeOutcome, Refinement, RefineError,
    SidecarCounter, TokenCounter, WhitespaceCounter,
};
use icrkit::judge::JudgeClient;
use icrkit::records::{to_jsonl, InstanceRecord, JsonLines, TokenRecord};
use serde::Serialize;

use crate::{ensure_dir, open_jsonl, write_json, CliError, Manifest, Outcome, RunConfig};

pub struct BuildArgs {
    pub candidates: PathBuf,
    pub token_counts: Option<PathBuf>,
    pub out: PathBuf,
    pub no_judge: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LineError {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub error: String,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct PromotionStats {
    pub negatives_scored: usize,
    pub above_threshold: usize,
    pub judge_approved: usize,
    pub judge_rejected: usize,
    pub judge_unparseable: usize,
    pub mean_gold_before: f64,
    pub mean_gold_after: f64,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct BuildReport {
    pub lines_read: usize,
    pub malformed: Vec<LineError>,
    pub invalid: Vec<LineError>,
    pub judge_failures: Vec<LineError>,
    pub over_length: Vec<String>,
    pub refined: usize,
    pub train: usize,
    pub dev: usize,
    pub promotion: PromotionStats,
}

impl BuildReport {
    pub fn failures(&self) -> usize {
        self.malformed.len() + self.invalid.len() + self.judge_failures.len()
    }
}

enum Step {
    Kept(Box<Refinement>, usize),
    OverLength(Box<Refinement>, usize),
    Invalid(LineError),
    Judge(LineError),
}

fn process(
    line: usize,
    cand: &Candidate,
    cfg: &RunConfig,
    judge: Option<&JudgeClient>,
    counter: &dyn TokenCounter,
) -> Step {
    let build = cfg.build_config();
    let err = |e: String| LineError {
        line,
        id: Some(cand.id.clone()),
        error: e,
    };
    match refine_candidate(cand, &build, judge) {
        Err(RefineError::Invalid(e)) => Step::Invalid(err(e.to_string())),
        Err(RefineError::Judge(e)) => Step::Judge(err(e.to_string())),
        Ok(r) => match filter_by_length(&r.instance, counter, &build) {
            Ok(true) => Step::Kept(Box::new(r), cand.gold_docs.len()),
            Ok(false) => Step::OverLength(Box::new(r), cand.gold_docs.len()),
            Err(e) => Step::Invalid(err(e.to_string())),
        },
    }
}

pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

pub fn run(cfg: &RunConfig, args: &BuildArgs) -> Result<Outcome, CliError> {
    let judge = if args.no_judge {
        None
    } else {
        Some(cfg.judge_client()?.ok_or_else(|| {
            CliError::Config("build-data needs a judge (set judge.mode) or --no-judge".into())
        })?)
    };
    let counter: Box<dyn TokenCounter> = match &args.token_counts {
        Some(p) => {
            let lines: JsonLines<TokenRecord> = open_jsonl(p)?;
            if let Some(e) = lines.errors.first() {
                return Err(CliError::Validation(format!("{}: {e}", p.display())));
            }
            let counts: HashMap<String, usize> = lines.records.into_iter().map(|(_, r)| (r.id, r.tokens)).collect();
            Box::new(SidecarCounter::new(counts))
        }
        None => Box::new(WhitespaceCounter),
    };
    let mut inputs: Vec<&Path> = vec![&args.candidates];
    if let Some(p) = &args.token_counts {
        inputs.push(p);
    }
    let manifest = Manifest::new("build-data", cfg, &inputs)?;

    let lines: JsonLines<Candidate> = open_jsonl(&args.candidates)?;
    let mut report = BuildReport {
        lines_read: lines.total(),
        ..Default::default()
    };
    for e in &lines.errors {
        log::warn!("{}: {e}", args.candidates.display());
        if let icrkit::records::ReadError::Malformed { line, message } = e {
            report.malformed.push(LineError {
                line: *line,
                id: None,
                error: message.clone(),
            });
        }
    }

    let steps = parallel_map(&lines.records, cfg.workers, |(line, cand)| {
        process(*line, cand, cfg, judge.as_ref(), counter.as_ref())
    });

    let mut kept: Vec<ContextInstance> = Vec::new();
    let (mut gold_before, mut gold_after, mut refined) = (0usize, 0usize, 0usize);
    for step in steps {
        let (r, before, keep) = match step {
            Step::Invalid(e) => {
                log::warn!("line {}: {}", e.line, e.error);
                report.invalid.push(e);
                continue;
            }
            Step::Judge(e) => {
                log::warn!("line {}: {}", e.line, e.error);
                report.judge_failures.push(e);
                continue;
            }
            Step::Kept(r, before) => (r, before, true),
            Step::OverLength(r, before) => (r, before, false),
        };
        refined += 1;
        gold_before += before;
        gold_after += r.instance.gold_ids.len();
        let p = &mut report.promotion;
        p.negatives_scored += r.promotion.candidates.len();
        p.above_threshold += r.promotion.promoted().count();
        for d in &r.filter.decisions {
            match d.outcome {
                JudgeOutcome::Approved => p.judge_approved += 1,
                JudgeOutcome::Rejected => p.judge_rejected += 1,
                JudgeOutcome::Unparseable => p.judge_unparseable += 1,
            }
        }
        if keep {
            kept.push(r.instance);
        } else {
            report.over_length.push(r.instance.id);
        }
    }
    report.refined = refined;
    if refined > 0 {
        report.promotion.mean_gold_before = gold_before as f64 / refined as f64;
        report.promotion.mean_gold_after = gold_after as f64 / refined as f64;
    }

    let out = ensure_dir(&args.out)?;
    let bad = report.malformed.len() + report.invalid.len();
    let too_many = report.lines_read == 0 || bad as f64 > cfg.max_malformed_fraction * report.lines_read as f64;
    if too_many {
        write_json(&out.join("build_report.json"), &report)?;
        return Err(CliError::Validation(format!(
            "{bad} of {} candidate lines are malformed or invalid; aborting",
            report.lines_read
        )));
    }

    let (train, dev) = split_dataset(&kept, cfg.split_ratio, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    report.train = train.len();
    report.dev = dev.len();
    std::fs::write(out.join("train.jsonl"), to_jsonl(train.iter().map(InstanceRecord::from)))?;
    std::fs::write(out.join("dev.jsonl"), to_jsonl(dev.iter().map(InstanceRecord::from)))?;
    write_json(&out.join("build_report.json"), &report)?;
    manifest.write(&out)?;
    log::info!(
        "build-data: {} refined, {} train, {} dev, {} failures",
        refined,
        report.train,
        report.dev,
        report.failures()
    );
    Ok(Outcome::from_failures(report.failures()))
}
