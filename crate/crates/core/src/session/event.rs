//! Session events and the append-only logs that persist them.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SessionConfig;
use crate::hierarchy::{CategoryId, Descriptors, LabelPath, ObjectId};
use crate::ingest::{ManifestHeader, RecordLine};
use crate::loops::{Answer, Prompt};

pub const LOG_FORMAT: &str = "vislabel-session-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    ManifestLoaded {
        header: ManifestHeader,
        records: Vec<RecordLine>,
    },
    QuestionIssued {
        prompt: Prompt,
    },
    AnswerReceived {
        answer: Answer,
    },
    /// `object_id` is set when the category was created to hold that
    /// object; seeded categories carry none.
    CategoryCreated {
        category: CategoryId,
        parent: CategoryId,
        descriptors: Descriptors,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        object_id: Option<ObjectId>,
    },
    ObjectAssigned {
        object_id: ObjectId,
        category: CategoryId,
        path: LabelPath,
    },
    EpisodeAborted {
        object_id: ObjectId,
        reason: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ManifestLoaded { .. } => "ManifestLoaded",
            EventKind::QuestionIssued { .. } => "QuestionIssued",
            EventKind::AnswerReceived { .. } => "AnswerReceived",
            EventKind::CategoryCreated { .. } => "CategoryCreated",
            EventKind::ObjectAssigned { .. } => "ObjectAssigned",
            EventKind::EpisodeAborted { .. } => "EpisodeAborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub config: SessionConfig,
}

impl LogHeader {
    pub fn new(config: SessionConfig) -> Self {
        LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            config,
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported log format {format:?} version {version}")]
    UnsupportedFormat { format: String, version: u32 },
    #[error("log already exists at {0}")]
    Exists(PathBuf),
    #[error("{0}")]
    Injected(String),
}

/// Durable, append-only storage for one session's events.
pub trait EventLog {
    /// Returns only once the event is persisted.
    fn append(&mut self, event: &SessionEvent) -> Result<(), LogError>;
}

/// In-memory log; can be told to fail from a given append onwards.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog {
    pub events: Vec<SessionEvent>,
    pub fail_after: Option<usize>,
}

impl MemoryLog {
    pub fn new() -> Self {
        MemoryLog::default()
    }
}

impl EventLog for MemoryLog {
    fn append(&mut self, event: &SessionEvent) -> Result<(), LogError> {
        if self.fail_after.is_some_and(|n| self.events.len() >= n) {
            return Err(LogError::Injected("append refused".into()));
        }
        self.events.push(event.clone());
        Ok(())
    }
}

/// JSON Lines file: a header line with the session config, then one event
/// per line. Every append is flushed and synced before returning.
#[derive(Debug)]
pub struct FileLog {
    path: PathBuf,
    file: File,
}

impl FileLog {
    pub fn create(path: impl AsRef<Path>, config: &SessionConfig) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => LogError::Exists(path.clone()),
                _ => LogError::Io(e),
            })?;
        let header = serde_json::to_string(&LogHeader::new(config.clone())).expect("header serializes");
        writeln!(file, "{header}")?;
        file.sync_data()?;
        Ok(FileLog { path, file })
    }

    /// Reads the header and every complete event. A final line without a
    /// trailing newline is a torn write and is cut off.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, SessionConfig, Vec<SessionEvent>), LogError> {
        let path = path.as_ref().to_path_buf();
        let mut reader = BufReader::new(File::open(&path)?);
        let mut header: Option<LogHeader> = None;
        let mut events = Vec::new();
        let mut good_len = 0u64;
        let mut line_no = 0;
        let mut buf = String::new();
        loop {
            buf.clear();
            let n = reader.read_line(&mut buf)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            if !buf.ends_with('\n') {
                log::warn!("{}: dropping torn final line {line_no}", path.display());
                break;
            }
            let text = buf.trim_end();
            let parse = |e: serde_json::Error| LogError::Parse {
                line: line_no,
                message: e.to_string(),
            };
            if header.is_none() {
                let h: LogHeader = serde_json::from_str(text).map_err(parse)?;
                if h.format != LOG_FORMAT || h.version != LOG_VERSION {
                    return Err(LogError::UnsupportedFormat {
                        format: h.format,
                        version: h.version,
                    });
                }
                header = Some(h);
            } else if !text.is_empty() {
                events.push(serde_json::from_str(text).map_err(parse)?);
            }
            good_len += n as u64;
        }
        let header = header.ok_or(LogError::Parse {
            line: 1,
            message: "missing log header".into(),
        })?;
        let mut file = OpenOptions::new().append(true).open(&path)?;
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok((FileLog { path, file }, header.config, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventLog for FileLog {
    fn append(&mut self, event: &SessionEvent) -> Result<(), LogError> {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }
}

impl<L: EventLog + ?Sized> EventLog for Box<L> {
    fn append(&mut self, event: &SessionEvent) -> Result<(), LogError> {
        (**self).append(event)
    }
}
