use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{SessionError, SessionState};

pub const SNAPSHOT_FORMAT: &str = "slotforge-session";
pub const SNAPSHOT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    format: String,
    version: u64,
    state: SessionState,
}

fn io_err(path: &Path, source: std::io::Error) -> SessionError {
    SessionError::Io { path: path.display().to_string(), source }
}

/// Pretty JSON snapshot. Without embeddings the question vectors and
/// centroids are dropped and rebuilt from the fitted model on restore.
pub fn to_snapshot_json(state: &SessionState, include_embeddings: bool) -> String {
    let mut state = state.clone();
    if !include_embeddings {
        for q in state.questions.values_mut() {
            q.embedding.clear();
        }
        state.clusters.centroids.clear();
    }
    let file = SnapshotFile { format: SNAPSHOT_FORMAT.to_string(), version: SNAPSHOT_VERSION, state };
    let mut out = serde_json::to_string_pretty(&file).expect("state serializes");
    out.push('\n');
    out
}

pub fn from_snapshot_json(raw: &str) -> Result<SessionState, SessionError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| SessionError::CorruptSnapshot(e.to_string()))?;
    if value.get("format").and_then(Value::as_str) != Some(SNAPSHOT_FORMAT) {
        return Err(SessionError::CorruptSnapshot("missing or unknown format tag".into()));
    }
    let version = value
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| SessionError::CorruptSnapshot("missing version".into()))?;
    if version > SNAPSHOT_VERSION {
        return Err(SessionError::Version { found: version, supported: SNAPSHOT_VERSION });
    }
    let file: SnapshotFile = serde_json::from_value(value).map_err(|e| SessionError::CorruptSnapshot(e.to_string()))?;
    let mut state = file.state;
    let elided = state.questions.values().any(|q| q.embedding.is_empty());
    if elided {
        for q in state.questions.values_mut() {
            q.embedding = state.tfidf.embed(&q.bleached).values;
        }
    }
    if elided || state.clusters.centroids.is_empty() {
        let mut clusters = state.clusters.clone();
        clusters.refresh(|id| state.questions.get(id).map(|q| q.embedding.as_slice()));
        state.clusters = clusters;
    }
    state.check_invariants().map_err(SessionError::CorruptSnapshot)?;
    Ok(state)
}

/// Writes the snapshot atomically: a temporary file in the same directory is
/// renamed over `path`.
pub fn snapshot(state: &SessionState, path: &Path, include_embeddings: bool) -> Result<(), SessionError> {
    write_atomic(path, to_snapshot_json(state, include_embeddings).as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "snapshot".into());
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let tmp = dir.join(format!(".{name}.{}.{}.tmp", std::process::id(), NEXT.fetch_add(1, Ordering::Relaxed)));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path, e)
    })
}

pub fn restore(path: &Path) -> Result<SessionState, SessionError> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    from_snapshot_json(&raw)
}
