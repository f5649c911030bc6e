//! Sessions on disk: one event log per session under
//! `<data dir>/sessions/<id>/events.jsonl`, opened lazily and kept in memory.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;
use vislabel_core::ingest::Manifest;
use vislabel_core::session::{FileLog, LogError, Session, SessionConfig, SessionError, SessionState};
use vislabel_core::Hierarchy;

pub const DATA_DIR_ENV: &str = "VISLABEL_DATA_DIR";

pub type SharedSession = Arc<Mutex<Session<FileLog>>>;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session {0:?}")]
    NotFound(String),
    #[error("session {0:?} already exists")]
    Exists(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("event log: {0}")]
    Log(#[from] LogError),
    #[error("data dir: {0}")]
    Io(#[from] io::Error),
}

pub struct Store {
    root: PathBuf,
    open: Mutex<HashMap<String, SharedSession>>,
}

/// Locks a session, recovering from a panicked holder: sessions only change
/// through check-then-persist-then-apply, so a panic never leaves one half
/// updated.
pub fn lock(session: &SharedSession) -> MutexGuard<'_, Session<FileLog>> {
    session.lock().unwrap_or_else(|e| e.into_inner())
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store {
            root: root.into(),
            open: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id).join("events.jsonl")
    }

    fn open_sessions(&self) -> MutexGuard<'_, HashMap<String, SharedSession>> {
        self.open.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Creates a session, persists its first events and returns it.
    pub fn create(
        &self,
        config: SessionConfig,
        manifest: &Manifest,
        seed: Option<&Hierarchy>,
    ) -> Result<SharedSession, StoreError> {
        config.validate()?;
        let id = config.session_id.clone();
        let mut open = self.open_sessions();
        let path = self.log_path(&id);
        if open.contains_key(&id) || path.exists() {
            return Err(StoreError::Exists(id));
        }
        let log = FileLog::create(&path, &config).map_err(|e| match e {
            LogError::Exists(_) => StoreError::Exists(id.clone()),
            e => e.into(),
        })?;
        let session = match Session::create(config, manifest, seed, log) {
            Ok(s) => s,
            Err(e) => {
                // nothing references a session that failed to load
                let _ = fs::remove_dir_all(path.parent().expect("log path has a parent"));
                return Err(e.into());
            }
        };
        let shared = Arc::new(Mutex::new(session));
        open.insert(id, shared.clone());
        Ok(shared)
    }

    /// Returns the session, resuming it from its log on first access.
    pub fn get(&self, id: &str) -> Result<SharedSession, StoreError> {
        let mut open = self.open_sessions();
        if let Some(s) = open.get(id) {
            return Ok(s.clone());
        }
        let path = self.existing_log(id)?;
        let (log, config, events) = FileLog::open(&path)?;
        let session = Session::resume(config, &events, log)?;
        let shared = Arc::new(Mutex::new(session));
        open.insert(id.to_string(), shared.clone());
        Ok(shared)
    }

    /// Rebuilds a session's state from its log without opening it for
    /// writing.
    pub fn snapshot(&self, id: &str) -> Result<SessionState, StoreError> {
        if let Some(s) = self.open_sessions().get(id) {
            return Ok(lock(s).state().clone());
        }
        let (_, config, events) = FileLog::open(self.existing_log(id)?)?;
        Ok(SessionState::replay(config, &events)?)
    }

    fn existing_log(&self, id: &str) -> Result<PathBuf, StoreError> {
        let valid = SessionConfig::new(id, 1, "").validate().is_ok();
        let path = self.log_path(id);
        if valid && path.is_file() {
            Ok(path)
        } else {
            Err(StoreError::NotFound(id.to_string()))
        }
    }

    /// Ids of all sessions with a log, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("sessions");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if entry.path().join("events.jsonl").is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
