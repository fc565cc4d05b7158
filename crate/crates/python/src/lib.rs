//! Python bindings for the icrkit reward and evaluation core.
//!
//! Structured values cross the boundary as plain dicts and lists.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use icrkit::evaluation;
use icrkit::judge::JudgeClient;
use icrkit::matching::{self, NormalizationRules, DEFAULT_NGRAM};
use icrkit::records::{read_jsonl, InstanceRecord, RewardRequest, RewardResponse};
use icrkit::{ContextInstance, ParsedOutput, RewardConfig, RewardKind};
use indexmap::IndexMap;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn parse_kind(kind: &str) -> PyResult<RewardKind> {
    serde_json::from_value(serde_json::Value::String(kind.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown reward kind {kind:?}")))
}

fn load_judge(path: Option<&str>) -> PyResult<Option<JudgeClient>> {
    path.map(|p| JudgeClient::recorded_from_file(Path::new(p)).map_err(value_err))
        .transpose()
}

fn instance_from_py(obj: &Bound<'_, PyAny>) -> PyResult<ContextInstance> {
    let rec: InstanceRecord = from_py(obj)?;
    ContextInstance::try_from(rec).map_err(value_err)
}

/// Answer normalization: lowercase, punctuation and articles removed.
#[pyfunction]
fn normalize_answer(text: &str) -> String {
    matching::normalize(text, &NormalizationRules::answer())
}

#[pyfunction]
fn sub_exact_match(prediction: &str, gold: &str) -> PyResult<bool> {
    matching::sub_exact_match(prediction, gold).map_err(value_err)
}

/// Jaccard, character F1 and n-gram overlap under lexical normalization.
#[pyfunction]
#[pyo3(signature = (a, b, n = DEFAULT_NGRAM))]
fn similarity(a: &str, b: &str, n: usize) -> (f64, f64, f64) {
    let rules = NormalizationRules::lexical();
    (
        matching::jaccard_similarity(a, b, &rules),
        matching::char_f1(a, b, &rules),
        matching::ngram_overlap(a, b, n, &rules),
    )
}

#[pyfunction]
fn parse_output<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ParsedOutput::parse(text))
}

/// Scores one output against an instance dict. `judge_fixtures` is a recorded
/// judge file, required for R_JUDGE.
#[pyfunction]
#[pyo3(signature = (instance, output_text, kind, judge_fixtures = None))]
fn compute_reward<'py>(
    py: Python<'py>,
    instance: &Bound<'py, PyAny>,
    output_text: &str,
    kind: &str,
    judge_fixtures: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = instance_from_py(instance)?;
    let kind = parse_kind(kind)?;
    let judge = load_judge(judge_fixtures)?;
    let r = py
        .detach(|| icrkit::compute_reward(&inst, output_text, kind, judge.as_ref(), &RewardConfig::default()))
        .map_err(value_err)?;
    to_py(py, &RewardResponse::ok("", r))
}

#[pyfunction]
fn subem(prediction: &str, answers: Vec<String>) -> PyResult<u8> {
    evaluation::subem_score(prediction, &answers).map_err(value_err)
}

#[pyfunction]
fn rouge_l(prediction: &str, reference: &str) -> f64 {
    evaluation::rouge_l(prediction, reference)
}

#[pyfunction]
#[pyo3(signature = (ranking, relevant, k = evaluation::NDCG_K))]
fn ndcg_at_k(ranking: Vec<usize>, relevant: BTreeSet<usize>, k: usize) -> PyResult<f64> {
    evaluation::ndcg_at_k(&ranking, &relevant, k).map_err(value_err)
}

/// Pearson r and two-sided p-value.
#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    let c = evaluation::pearson(&x, &y).map_err(value_err)?;
    Ok((c.r, c.p))
}

/// Relative drop per task (percent) and their mean.
#[pyfunction]
fn drop_table(full: IndexMap<String, f64>, compressed: IndexMap<String, f64>) -> PyResult<(IndexMap<String, f64>, f64)> {
    let row = evaluation::drop_table(&full, &compressed).map_err(value_err)?;
    Ok((row.drops, row.average))
}

/// Reward scorer over a fixed instance file, same request/response schema as
/// the `serve` command.
#[pyclass(frozen)]
struct Scorer {
    corpus: BTreeMap<String, ContextInstance>,
    judge: Option<JudgeClient>,
}

#[pymethods]
impl Scorer {
    #[new]
    #[pyo3(signature = (instances, judge_fixtures = None))]
    fn new(instances: &str, judge_fixtures: Option<&str>) -> PyResult<Self> {
        let file = File::open(instances).map_err(|e| PyIOError::new_err(format!("{instances}: {e}")))?;
        let lines = read_jsonl::<InstanceRecord>(BufReader::new(file)).map_err(|e| PyIOError::new_err(e.to_string()))?;
        if let Some(e) = lines.errors.first() {
            return Err(value_err(e));
        }
        let mut corpus = BTreeMap::new();
        for (line, rec) in lines.records {
            let inst = ContextInstance::try_from(rec).map_err(|e| value_err(format!("line {line}: {e}")))?;
            if corpus.contains_key(&inst.id) {
                return Err(value_err(format!("line {line}: duplicate instance id {}", inst.id)));
            }
            corpus.insert(inst.id.clone(), inst);
        }
        Ok(Self {
            corpus,
            judge: load_judge(judge_fixtures)?,
        })
    }

    fn __len__(&self) -> usize {
        self.corpus.len()
    }

    /// Scores a request dict; failures come back as a response with `error`.
    fn score<'py>(&self, py: Python<'py>, request: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let req: RewardRequest = from_py(request)?;
        let resp = py.detach(|| {
            let inst = match req.resolve(&self.corpus) {
                Ok(i) => i,
                Err(e) => return RewardResponse::error(Some(req.request_id.clone()), None, e.to_string()),
            };
            match icrkit::compute_reward(&inst, &req.output_text, req.kind, self.judge.as_ref(), &RewardConfig::default()) {
                Ok(r) => RewardResponse::ok(&req.request_id, r),
                Err(e) => RewardResponse::error(Some(req.request_id.clone()), None, e.to_string()),
            }
        });
        to_py(py, &resp)
    }
}

#[pymodule]
fn pyicrkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(sub_exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(parse_output, m)?)?;
    m.add_function(wrap_pyfunction!(compute_reward, m)?)?;
    m.add_function(wrap_pyfunction!(subem, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(drop_table, m)?)?;
    m.add_class::<Scorer>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
