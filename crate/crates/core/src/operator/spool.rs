//! Spool-directory ingestion: dropping a BridgeJob file creates the job,
//! removing the file deletes it.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use tokio::sync::{mpsc, oneshot};

use crate::clock::SharedClock;
use crate::spec::parse_spec;
use crate::store::JobKey;

use super::Command;

pub(super) async fn watch_spool(
    dir: PathBuf,
    poll: Duration,
    clock: SharedClock,
    tx: mpsc::UnboundedSender<Command>,
) {
    let mut known: HashMap<PathBuf, JobKey> = HashMap::new();
    loop {
        clock.sleep(poll).await;
        let present = scan(&dir);

        for (path, document) in &present {
            if known.contains_key(path) {
                continue;
            }
            match parse_spec(document) {
                Ok(spec) => {
                    let key = spec.key();
                    known.insert(path.clone(), key.clone());
                    let (reply, rx) = oneshot::channel();
                    if tx
                        .send(Command::Submit {
                            document: document.clone(),
                            reply,
                        })
                        .is_err()
                    {
                        return;
                    }
                    match rx.await {
                        Ok(Ok(_)) => tracing::info!(%key, ?path, "spooled job created"),
                        Ok(Err(e)) => tracing::warn!(%key, ?path, error = %e, "spooled job rejected"),
                        Err(_) => return,
                    }
                }
                Err(e) => {
                    tracing::warn!(?path, error = %e, "unparseable spec file ignored");
                    // Remember it so the error logs once, keyed by a
                    // placeholder that can never collide with a real job.
                    known.insert(path.clone(), JobKey::new("-", "-"));
                }
            }
        }

        let removed: Vec<PathBuf> = known
            .keys()
            .filter(|p| !present.iter().any(|(q, _)| q == *p))
            .cloned()
            .collect();
        for path in removed {
            if let Some(key) = known.remove(&path) {
                if key.namespace == "-" {
                    continue;
                }
                let (reply, rx) = oneshot::channel();
                if tx
                    .send(Command::Delete {
                        key: key.clone(),
                        reply,
                    })
                    .is_err()
                {
                    return;
                }
                let _ = rx.await;
                tracing::info!(%key, ?path, "spooled job deleted");
            }
        }
    }
}

fn scan(dir: &std::path::Path) -> Vec<(PathBuf, String)> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for entry in entries.flatten() {
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("yaml") | Some("yml") => {}
            _ => continue,
        }
        if let Ok(document) = std::fs::read_to_string(&path) {
            out.push((path, document));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
