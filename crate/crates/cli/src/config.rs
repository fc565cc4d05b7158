//! Run configuration: defaults, optional TOML file, `ICRKIT_*` environment
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use icrkit::corpus::{BuildConfig, ChunkUnit};
use icrkit::evaluation::{AttentionAggregation, NDCG_K};
use icrkit::judge::{JudgeClient, JudgeMode};
use icrkit::matching::{NormalizationRules, DEFAULT_NGRAM};
use icrkit::parsing::QUOTE_TOKEN_LIMIT;
use icrkit::rewards::RewardConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const ENV_PREFIX: &str = "ICRKIT_";

/// Variables read by clap or by the judge client directly, not config keys.
const RESERVED_ENV: [&str; 5] = ["CONFIG", "SEED", "WORKERS", "JUDGE_API_KEY", "LOG"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub mode: Option<JudgeMode>,
    /// Recorded response fixtures (JSON lines of request digest / response).
    pub fixtures: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub retries: usize,
    pub max_in_flight: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            mode: None,
            fixtures: None,
            endpoint: None,
            model: None,
            timeout_secs: 60,
            retries: 2,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub normalization: NormalizationRules,
    pub similarity: NormalizationRules,
    pub fuzzy_threshold: f64,
    pub ngram_n: usize,
    pub quote_token_limit: usize,
    pub ndcg_k: usize,
    pub attention_aggregation: AttentionAggregation,
    pub max_context_tokens: usize,
    pub retriever_top_k: usize,
    pub chunk_unit: ChunkUnit,
    pub chunk_size: usize,
    pub split_ratio: f64,
    /// Abort build-data when more than this fraction of lines is malformed.
    pub max_malformed_fraction: f64,
    pub judge: JudgeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let build = BuildConfig::default();
        Self {
            seed: 0,
            workers: 4,
            output_dir: PathBuf::from("icrkit-out"),
            normalization: NormalizationRules::answer(),
            similarity: NormalizationRules::lexical(),
            fuzzy_threshold: build.fuzzy_threshold,
            ngram_n: DEFAULT_NGRAM,
            quote_token_limit: QUOTE_TOKEN_LIMIT,
            ndcg_k: NDCG_K,
            attention_aggregation: AttentionAggregation::Sum,
            max_context_tokens: build.max_context_tokens,
            retriever_top_k: build.retriever_top_k,
            chunk_unit: build.chunk_unit,
            chunk_size: build.chunk_size,
            split_ratio: 0.95,
            max_malformed_fraction: 0.10,
            judge: JudgeConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid by `path` (if any) and then by `ICRKIT_*` variables
    /// from `env`. Nested keys use a double underscore: `ICRKIT_JUDGE__MODE`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, CliError> {
        let mut table = toml::Table::try_from(Self::default()).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            let mut file: toml::Table = text
                .parse()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            // Relative fixture paths are relative to the config file.
            if let Some(toml::Value::String(f)) = file.get_mut("judge").and_then(|j| j.get_mut("fixtures")) {
                if Path::new(f.as_str()).is_relative() {
                    let base = p.parent().unwrap_or(Path::new(""));
                    *f = base.join(&*f).display().to_string();
                }
            }
            merge(&mut table, file);
        }
        let mut vars: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_owned(), v)))
            .filter(|(k, _)| !RESERVED_ENV.contains(&k.as_str()))
            .collect();
        vars.sort();
        for (key, raw) in vars {
            let path: Vec<String> = key.to_lowercase().split("__").map(str::to_owned).collect();
            set_path(&mut table, &path, env_value(&raw))
                .map_err(|e| CliError::Config(format!("{ENV_PREFIX}{key}: {e}")))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if self.ndcg_k == 0 {
            return Err(CliError::Config("ndcg_k must be at least 1".into()));
        }
        if self.quote_token_limit == 0 {
            return Err(CliError::Config("quote_token_limit must be at least 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(CliError::Config("split_ratio must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.max_malformed_fraction) {
            return Err(CliError::Config("max_malformed_fraction must lie in [0, 1]".into()));
        }
        if self.judge.max_in_flight == 0 {
            return Err(CliError::Config("judge.max_in_flight must be at least 1".into()));
        }
        self.build_config().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn build_config(&self) -> BuildConfig {
        BuildConfig {
            max_context_tokens: self.max_context_tokens,
            shuffle_seed: self.seed,
            retriever_top_k: self.retriever_top_k,
            fuzzy_threshold: self.fuzzy_threshold,
            chunk_unit: self.chunk_unit,
            chunk_size: self.chunk_size,
            ngram_n: self.ngram_n,
            similarity_rules: self.similarity,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            answer_rules: self.normalization,
            quote_token_limit: self.quote_token_limit,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// The configured judge, or `None` when no mode is set.
    pub fn judge_client(&self) -> Result<Option<JudgeClient>, CliError> {
        let j = &self.judge;
        match j.mode {
            None => Ok(None),
            Some(JudgeMode::Recorded) => {
                let path = j
                    .fixtures
                    .as_ref()
                    .ok_or_else(|| CliError::Config("judge.mode = recorded needs judge.fixtures".into()))?;
                require_file(path)?;
                let client = JudgeClient::recorded_from_file(path).map_err(|e| CliError::Config(e.to_string()))?;
                Ok(Some(client))
            }
            Some(JudgeMode::Live) => live_client(j).map(Some),
        }
    }
}

#[cfg(feature = "live-judge")]
fn live_client(j: &JudgeConfig) -> Result<JudgeClient, CliError> {
    let (Some(endpoint), Some(model)) = (&j.endpoint, &j.model) else {
        return Err(CliError::Config("judge.mode = live needs judge.endpoint and judge.model".into()));
    };
    JudgeClient::live(endpoint, model, Duration::from_secs(j.timeout_secs), j.max_in_flight, j.retries)
        .map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(not(feature = "live-judge"))]
fn live_client(_: &JudgeConfig) -> Result<JudgeClient, CliError> {
    let _ = Duration::ZERO;
    Err(CliError::Config("built without the live-judge feature".into()))
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("input file {} does not exist", path.display())))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), String> {
    match path {
        [] => Err("empty key".into()),
        [last] => {
            table.insert(last.clone(), value);
            Ok(())
        }
        [head, rest @ ..] => {
            let entry = table
                .entry(head.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => set_path(t, rest, value),
                _ => Err(format!("{head} is not a table")),
            }
        }
    }
}

/// Environment values are TOML literals when they parse as one (numbers,
/// booleans, arrays) and plain strings otherwise.
fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}
