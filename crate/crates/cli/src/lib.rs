//! Batch commands and the streaming reward service behind the `icrkit`
//! binary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use icrkit::corpus::ContextInstance;
use icrkit::records::{read_jsonl, InstanceRecord, JsonLines};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub mod build;
pub mod config;
pub mod eval;
pub mod report;
pub mod reward;
pub mod serve;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Process exit status: 0 all processed, 1 partial failures, 2 configuration
/// or validation error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

impl Outcome {
    pub fn from_failures(n: usize) -> Self {
        if n == 0 {
            Self::Complete
        } else {
            Self::Partial
        }
    }

    pub fn code(self) -> i32 {
        match self {
            Self::Complete => 0,
            Self::Partial => 1,
        }
    }
}

impl CliError {
    pub fn code(&self) -> i32 {
        2
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    pub input_digests: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
    pub started_at: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, inputs: &[&Path]) -> Result<Self, CliError> {
        let mut input_digests = BTreeMap::new();
        for p in inputs {
            input_digests.insert(p.display().to_string(), file_digest(p)?);
        }
        Ok(Self {
            command: command.to_owned(),
            config_digest: cfg.digest(),
            input_digests,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            started_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn open_jsonl<T: DeserializeOwned>(path: &Path) -> Result<JsonLines<T>, CliError> {
    config::require_file(path)?;
    let f = File::open(path)?;
    Ok(read_jsonl(BufReader::new(f))?)
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

/// Loads and validates an instance file. Any bad line is a validation error:
/// downstream ids must resolve against a complete corpus.
pub fn load_instances(path: &Path) -> Result<BTreeMap<String, ContextInstance>, CliError> {
    let lines: JsonLines<InstanceRecord> = open_jsonl(path)?;
    if let Some(e) = lines.errors.first() {
        return Err(CliError::Validation(format!("{}: {e}", path.display())));
    }
    let mut out = BTreeMap::new();
    for (line, rec) in lines.records {
        let inst = ContextInstance::try_from(rec)
            .map_err(|e| CliError::Validation(format!("{} line {line}: {e}", path.display())))?;
        if out.contains_key(&inst.id) {
            return Err(CliError::Validation(format!(
                "{} line {line}: duplicate instance id {}",
                path.display(),
                inst.id
            )));
        }
        out.insert(inst.id.clone(), inst);
    }
    Ok(out)
}
