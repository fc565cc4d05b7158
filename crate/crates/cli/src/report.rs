//! `report`: drop tables and correlations from already-aggregated scores.

use std::path::PathBuf;

use icrkit::evaluation::{drop_table, pearson, DropTable, EvalReport, NamedDropRow};
use indexmap::IndexMap;
use serde::Deserialize;

use crate::{config::require_file, ensure_dir, write_json, CliError, Manifest, Outcome, RunConfig};

/// Per-model task scores, in display order.
pub type ScoreTable = IndexMap<String, IndexMap<String, f64>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropInput {
    pub full: ScoreTable,
    pub compressed: ScoreTable,
    /// Columns left out of the drop table, with the reason recorded as a note.
    #[serde(default)]
    pub exclude: IndexMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationInput {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tables {
    #[serde(default)]
    pub run_id: String,
    pub drop: Option<DropInput>,
    pub correlation: Option<CorrelationInput>,
}

pub struct ReportArgs {
    pub tables: PathBuf,
    pub out: PathBuf,
}

pub fn drop_section(input: &DropInput) -> Result<DropTable, CliError> {
    let mut rows = Vec::new();
    for (model, full) in &input.full {
        let compressed = input
            .compressed
            .get(model)
            .ok_or_else(|| CliError::Validation(format!("no compressed scores for {model}")))?;
        let kept: IndexMap<String, f64> = full
            .iter()
            .filter(|(task, _)| !input.exclude.contains_key(*task))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        let row = drop_table(&kept, compressed).map_err(|e| CliError::Validation(format!("{model}: {e}")))?;
        rows.push(NamedDropRow {
            model: model.clone(),
            row,
        });
    }
    let notes = input.exclude.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    Ok(DropTable { rows, notes })
}

pub fn build_report(tables: &Tables) -> Result<EvalReport, CliError> {
    let mut report = EvalReport {
        run_id: tables.run_id.clone(),
        ..Default::default()
    };
    if let Some(d) = &tables.drop {
        report.drop_table = Some(drop_section(d)?);
    }
    if let Some(c) = &tables.correlation {
        report.correlation = Some(pearson(&c.x, &c.y).map_err(|e| CliError::Validation(e.to_string()))?);
    }
    Ok(report)
}

pub fn run(cfg: &RunConfig, args: &ReportArgs) -> Result<Outcome, CliError> {
    require_file(&args.tables)?;
    let manifest = Manifest::new("report", cfg, &[&args.tables])?;
    let text = std::fs::read_to_string(&args.tables)?;
    let tables: Tables = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.tables.display())))?;
    if tables.drop.is_none() && tables.correlation.is_none() {
        return Err(CliError::Validation("tables file has neither drop nor correlation inputs".into()));
    }
    let report = build_report(&tables)?;
    let out = ensure_dir(&args.out)?;
    write_json(&out.join("report.json"), &report)?;
    for (name, table) in report.tsv_tables() {
        std::fs::write(out.join(format!("{name}.tsv")), table)?;
    }
    manifest.write(&out)?;
    Ok(Outcome::Complete)
}
