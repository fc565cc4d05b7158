use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icrkit::rewards::RewardKind;
use icrkit_cli::build::BuildArgs;
use icrkit_cli::eval::{EvalArgs, Metric};
use icrkit_cli::report::ReportArgs;
use icrkit_cli::reward::{RewardArgs, RewardInput};
use icrkit_cli::serve::ServeArgs;
use icrkit_cli::{build, eval, report, reward, serve, CliError, Outcome, RunConfig};

#[derive(Parser)]
#[command(name = "icrkit", version, about = "Verifiable rewards and evaluation for in-context retrieval")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "ICRKIT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "ICRKIT_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "ICRKIT_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build shuffled train/dev instance files from candidate retrievals.
    BuildData {
        #[arg(long)]
        candidates: PathBuf,
        /// JSON lines of {"id", "tokens"}; whitespace counting when absent.
        #[arg(long)]
        token_counts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep every fuzzy promotion without asking a judge.
        #[arg(long)]
        no_judge: bool,
    },
    /// Score predictions or reward requests in batch.
    Reward {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, conflicts_with = "requests", requires = "kind")]
        predictions: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        kind: Vec<RewardKind>,
        #[arg(long, required_unless_present = "predictions")]
        requests: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve reward requests as newline-delimited JSON.
    Serve {
        #[arg(long)]
        instances: PathBuf,
        /// TCP address; stdin/stdout when absent.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Score benchmark predictions and attention dumps.
    Eval {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum)]
        metric: Option<Metric>,
        #[arg(long)]
        attention: Option<PathBuf>,
        #[arg(long)]
        ndcg: bool,
        #[arg(long)]
        retention_budget: Option<f64>,
        #[arg(long, default_value = "run")]
        run_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop tables and correlations from aggregated scores.
    Report {
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let out = |o: Option<PathBuf>| o.unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::BuildData {
            candidates,
            token_counts,
            out: o,
            no_judge,
        } => build::run(
            &cfg,
            &BuildArgs {
                candidates,
                token_counts,
                out: out(o),
                no_judge,
            },
        ),
        Command::Reward {
            instances,
            predictions,
            kind,
            requests,
            out: o,
        } => {
            let input = match (predictions, requests) {
                (Some(path), None) => RewardInput::Predictions { path, kinds: kind },
                (None, Some(path)) => RewardInput::Requests(path),
                _ => return Err(CliError::Config("give exactly one of --predictions / --requests".into())),
            };
            reward::run(
                &cfg,
                &RewardArgs {
                    instances,
                    input,
                    out: out(o),
                },
            )
        }
        Command::Serve { instances, listen } => serve::run(&cfg, &ServeArgs { instances, listen }),
        Command::Eval {
            instances,
            predictions,
            metric,
            attention,
            ndcg,
            retention_budget,
            run_id,
            out: o,
        } => eval::run(
            &cfg,
            &EvalArgs {
                instances,
                predictions,
                metric,
                attention,
                ndcg,
                retention_budget,
                run_id,
                out: out(o),
            },
        ),
        Command::Report { tables, out: o } => report::run(&cfg, &ReportArgs { tables, out: out(o) }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ICRKIT_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(o) => ExitCode::from(o.code() as u8),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
