//! NDJSON reward service over stdin/stdout or TCP.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crossbeam_channel::bounded;

use crate::reward::Scorer;
use crate::{load_instances, CliError, Manifest, Outcome, RunConfig};

pub struct ServeArgs {
    pub instances: PathBuf,
    pub listen: Option<String>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct StreamStats {
    pub responses: usize,
    pub errors: usize,
}

/// Reads request lines until EOF, scoring them on `workers` threads. Each
/// response is written as one complete line; order across requests is not
/// preserved. Returns after every in-flight request has been answered.
pub fn process_stream<R, W>(reader: R, writer: W, scorer: &Scorer, workers: usize) -> std::io::Result<StreamStats>
where
    R: BufRead,
    W: Write + Send,
{
    let (tx, rx) = bounded::<(usize, String)>(workers.max(1) * 4);
    let out = Mutex::new(writer);
    let responses = AtomicUsize::new(0);
    let errors = AtomicUsize::new(0);
    let write_failed: Mutex<Option<std::io::Error>> = Mutex::new(None);

    let read_result = std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            let rx = rx.clone();
            let (out, responses, errors, write_failed) = (&out, &responses, &errors, &write_failed);
            s.spawn(move || {
                for (line_no, line) in rx {
                    let resp = scorer.score_line(line_no, &line);
                    if resp.is_error() {
                        errors.fetch_add(1, Ordering::Relaxed);
                    }
                    let mut text = serde_json::to_string(&resp).expect("response serializes");
                    text.push('\n');
                    let mut w = out.lock().unwrap();
                    if let Err(e) = w.write_all(text.as_bytes()).and_then(|_| w.flush()) {
                        write_failed.lock().unwrap().get_or_insert(e);
                    }
                    responses.fetch_add(1, Ordering::Relaxed);
                }
            });
        }
        drop(rx);
        let mut result = Ok(());
        for (i, line) in reader.lines().enumerate() {
            match line {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => {
                    if tx.send((i + 1, l)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        drop(tx);
        result
    });
    read_result?;
    if let Some(e) = write_failed.into_inner().unwrap() {
        return Err(e);
    }
    Ok(StreamStats {
        responses: responses.into_inner(),
        errors: errors.into_inner(),
    })
}

pub fn run(cfg: &RunConfig, args: &ServeArgs) -> Result<Outcome, CliError> {
    let manifest = Manifest::new("serve", cfg, &[&args.instances])?;
    let scorer = Scorer {
        corpus: load_instances(&args.instances)?,
        judge: cfg.judge_client()?,
        rewards: cfg.reward_config(),
    };
    log::info!(
        "serving {} instances (config {}, seed {})",
        scorer.corpus.len(),
        &manifest.config_digest[..12],
        manifest.seed
    );
    match &args.listen {
        None => {
            let stdin = std::io::stdin();
            let stats = process_stream(stdin.lock(), std::io::stdout(), &scorer, cfg.workers)?;
            log::info!("served {} responses, {} errors", stats.responses, stats.errors);
            Ok(Outcome::from_failures(stats.errors))
        }
        Some(addr) => {
            let listener =
                TcpListener::bind(addr).map_err(|e| CliError::Config(format!("cannot listen on {addr}: {e}")))?;
            log::info!("listening on {}", listener.local_addr()?);
            let scorer = Arc::new(scorer);
            for conn in listener.incoming() {
                let stream = match conn {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        continue;
                    }
                };
                let scorer = Arc::clone(&scorer);
                let workers = cfg.workers;
                std::thread::spawn(move || {
                    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                    let reader = match stream.try_clone() {
                        Ok(r) => BufReader::new(r),
                        Err(e) => return log::warn!("{peer}: {e}"),
                    };
                    match process_stream(reader, stream, &scorer, workers) {
                        Ok(s) => log::info!("{peer}: {} responses, {} errors", s.responses, s.errors),
                        Err(e) => log::warn!("{peer}: {e}"),
                    }
                });
            }
            Ok(Outcome::Complete)
        }
    }
}
