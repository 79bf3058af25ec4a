//! One directory per session: `snapshot.json` (the full state, written
//! atomically), `session.json` (metadata) and `events.jsonl` (append-only).

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use slotforge_core::config::InductionConfig;
use slotforge_core::session::{restore, snapshot, Event, SessionState};

pub const API_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub documents: usize,
    pub slots: Vec<String>,
}

/// Session metadata returned by the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub api_version: u32,
    pub id: String,
    pub revision: u64,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub corpus: CorpusSummary,
    pub config: InductionConfig,
}

impl ApiSession {
    pub fn new(id: String, state: &SessionState, now_ms: u64) -> Self {
        ApiSession {
            api_version: API_VERSION,
            id,
            revision: state.revision(),
            created_ms: now_ms,
            updated_ms: now_ms,
            corpus: CorpusSummary {
                documents: state.corpus.len(),
                slots: state.corpus.slot_inventory.iter().cloned().collect(),
            },
            config: state.config.clone(),
        }
    }
}

/// Session ids are generated by the service; anything else is rejected
/// before it reaches the filesystem.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn snapshot_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("snapshot.json")
    }

    pub fn events_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("events.jsonl")
    }

    /// Persists a committed state. The snapshot is the source of truth and is
    /// replaced atomically; `new_events` are then appended to the log.
    pub fn save(&self, meta: &ApiSession, state: &SessionState, new_events: &[Event]) -> Result<(), String> {
        let dir = self.dir(&meta.id);
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        snapshot(state, &self.snapshot_path(&meta.id), false).map_err(|e| e.to_string())?;
        let meta_json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
        write_atomic(&dir.join("session.json"), &meta_json).map_err(|e| e.to_string())?;
        if !new_events.is_empty() {
            if let Err(e) = self.append_events(&meta.id, new_events) {
                warn!(session = %meta.id, error = %e, "event log append failed; snapshot holds the full log");
            }
        }
        Ok(())
    }

    fn append_events(&self, id: &str, events: &[Event]) -> std::io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.events_path(id))?;
        let mut buf = String::new();
        for e in events {
            buf.push_str(&serde_json::to_string(e).expect("events serialize"));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.sync_all()
    }

    pub fn load(&self, id: &str) -> Result<Option<(ApiSession, SessionState)>, String> {
        if !valid_id(id) || !self.snapshot_path(id).exists() {
            return Ok(None);
        }
        let state = restore(&self.snapshot_path(id)).map_err(|e| e.to_string())?;
        let meta_path = self.dir(id).join("session.json");
        let raw = fs::read_to_string(&meta_path).map_err(|e| format!("{}: {e}", meta_path.display()))?;
        let meta: ApiSession = serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", meta_path.display()))?;
        Ok(Some((meta, state)))
    }

    /// Ids of every stored session.
    pub fn list(&self) -> Vec<String> {
        let Ok(entries) = fs::read_dir(&self.root) else { return Vec::new() };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_id(id) && self.snapshot_path(id).exists())
            .collect();
        ids.sort();
        ids
    }
}
