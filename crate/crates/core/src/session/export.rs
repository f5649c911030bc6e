//! Dataset export: labeled objects, unassigned objects, per-object
//! transcripts and the hierarchy, as a directory of versioned files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SessionState;
use crate::hierarchy::{CategoryId, Hierarchy, HierarchyError, LabelPath, ObjectId};
use crate::ingest::CropRect;
use crate::loops::{Outcome, QuestionKind};

pub const EXPORT_VERSION: u32 = 1;

const DATASET_FILE: &str = "dataset.jsonl";
const UNASSIGNED_FILE: &str = "unassigned.jsonl";
const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
const HIERARCHY_FILE: &str = "hierarchy.json";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("export i/o: {0}")]
    Io(#[from] io::Error),
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error("hierarchy.json: {0}")]
    Hierarchy(#[from] HierarchyError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
    session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub object_id: ObjectId,
    pub source: String,
    pub uri: String,
    pub crop: CropRect,
    pub path: LabelPath,
    pub category: CategoryId,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnassignedRow {
    pub object_id: ObjectId,
    pub source: String,
    pub uri: String,
    pub crop: CropRect,
    /// "aborted" or "pending".
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub seq: u64,
    pub kind: QuestionKind,
    pub category: CategoryId,
    pub verdict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptOutcome {
    /// "assigned" or "created".
    #[serde(rename = "type")]
    pub kind: String,
    pub category: CategoryId,
    pub path: LabelPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub object_id: ObjectId,
    pub steps: Vec<StepRow>,
    pub outcome: TranscriptOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetExport {
    pub session_id: String,
    pub rows: Vec<DatasetRow>,
    pub unassigned: Vec<UnassignedRow>,
    pub transcripts: Vec<TranscriptRow>,
    pub hierarchy: Hierarchy,
}

impl DatasetExport {
    pub fn from_state(state: &SessionState) -> Self {
        let h = state.hierarchy();
        let path_of = |c: CategoryId| h.path_label(c).expect("assigned categories exist");
        let mut rows = Vec::new();
        let mut transcripts = Vec::new();
        for t in state.transcripts() {
            let category = t.outcome.category();
            let o = state.object(&t.object_id).expect("transcripts refer to queued objects");
            rows.push(DatasetRow {
                object_id: t.object_id.clone(),
                source: o.source.clone(),
                uri: o.uri.clone(),
                crop: o.crop,
                path: path_of(category),
                category,
                name: h.get(category).and_then(|c| c.name.clone()),
            });
            transcripts.push(TranscriptRow {
                object_id: t.object_id.clone(),
                steps: t
                    .steps
                    .iter()
                    .map(|s| StepRow {
                        seq: s.question.seq,
                        kind: s.question.kind,
                        category: s.question.category,
                        verdict: s.verdict,
                    })
                    .collect(),
                outcome: TranscriptOutcome {
                    kind: match t.outcome {
                        Outcome::AssignedTo(_) => "assigned",
                        Outcome::CreatedAndAssigned(_) => "created",
                    }
                    .into(),
                    category,
                    path: path_of(category),
                },
            });
        }
        let unassigned_row = |id: &ObjectId, status: &str, reason: Option<String>| {
            let o = state.object(id).expect("queued object");
            UnassignedRow {
                object_id: id.clone(),
                source: o.source.clone(),
                uri: o.uri.clone(),
                crop: o.crop,
                status: status.into(),
                reason,
            }
        };
        let mut unassigned: Vec<UnassignedRow> = state
            .aborted()
            .iter()
            .map(|a| unassigned_row(&a.object_id, "aborted", Some(a.reason.clone())))
            .collect();
        let handled = state.transcripts().len() + state.aborted().len();
        unassigned.extend(
            state.objects()[handled..]
                .iter()
                .map(|o| unassigned_row(&o.object_id, "pending", None)),
        );
        DatasetExport {
            session_id: state.config().session_id.clone(),
            rows,
            unassigned,
            transcripts,
            hierarchy: h.clone(),
        }
    }

    pub fn labels(&self) -> BTreeMap<ObjectId, LabelPath> {
        self.rows.iter().map(|r| (r.object_id.clone(), r.path.clone())).collect()
    }

    /// Number of rows per label.
    pub fn histogram(&self) -> BTreeMap<LabelPath, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.path.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// File name and contents of every export file.
    pub fn to_files(&self) -> Vec<(&'static str, String)> {
        vec![
            (DATASET_FILE, self.jsonl("vislabel-dataset", &self.rows)),
            (UNASSIGNED_FILE, self.jsonl("vislabel-unassigned", &self.unassigned)),
            (TRANSCRIPTS_FILE, self.jsonl("vislabel-transcripts", &self.transcripts)),
            (HIERARCHY_FILE, self.hierarchy.to_canonical_json()),
        ]
    }

    fn jsonl<T: Serialize>(&self, format: &str, rows: &[T]) -> String {
        let header = FileHeader {
            format: format.into(),
            version: EXPORT_VERSION,
            session_id: self.session_id.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in rows {
            out.push_str(&serde_json::to_string(r).expect("rows serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), ExportError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, text) in self.to_files() {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self, ExportError> {
        let dir = dir.as_ref();
        let (session_id, rows) = read_jsonl(dir, DATASET_FILE, "vislabel-dataset")?;
        let (s2, unassigned) = read_jsonl(dir, UNASSIGNED_FILE, "vislabel-unassigned")?;
        let (s3, transcripts) = read_jsonl(dir, TRANSCRIPTS_FILE, "vislabel-transcripts")?;
        if s2 != session_id || s3 != session_id {
            return Err(ExportError::Format {
                file: dir.display().to_string(),
                message: "files belong to different sessions".into(),
            });
        }
        let hierarchy = Hierarchy::from_json(&fs::read_to_string(dir.join(HIERARCHY_FILE))?)?;
        Ok(DatasetExport {
            session_id,
            rows,
            unassigned,
            transcripts,
            hierarchy,
        })
    }
}

fn read_jsonl<T: DeserializeOwned>(dir: &Path, file: &str, format: &str) -> Result<(String, Vec<T>), ExportError> {
    let text = fs::read_to_string(dir.join(file))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse_err = |line: usize, e: serde_json::Error| ExportError::Parse {
        file: file.into(),
        line: line + 1,
        message: e.to_string(),
    };
    let Some((i, first)) = lines.next() else {
        return Err(ExportError::Format {
            file: file.into(),
            message: "missing header".into(),
        });
    };
    let header: FileHeader = serde_json::from_str(first).map_err(|e| parse_err(i, e))?;
    if header.format != format || header.version != EXPORT_VERSION {
        return Err(ExportError::Format {
            file: file.into(),
            message: format!("unsupported format {:?} version {}", header.format, header.version),
        });
    }
    let rows = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i, e)))
        .collect::<Result<_, _>>()?;
    Ok((header.session_id, rows))
}
