//! Event-sourced labeling sessions.
//!
//! A [`Session`] owns the state of one annotator's pass over a manifest.
//! Every change goes through an event: commands validate, emit the event,
//! persist it, and only then apply it. Replaying a log through
//! [`SessionState::replay`] rebuilds exactly the same state, which is also
//! how an interrupted session resumes.
//!
//! Exactly one prompt is pending at a time and it is always on the log, so
//! a client that reconnects sees the same question it was shown before.

mod event;
mod export;

pub use event::{EventKind, EventLog, FileLog, LogError, LogHeader, MemoryLog, SessionEvent, LOG_FORMAT, LOG_VERSION};
pub use export::{DatasetExport, DatasetRow, ExportError, StepRow, TranscriptOutcome, TranscriptRow, UnassignedRow};

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{CategoryId, Descriptors, Hierarchy, HierarchyError, LabelPath, ObjectId};
use crate::ingest::{CropRect, IngestError, Manifest, ObjectInstance};
use crate::loops::{
    Answer, Episode, EpisodeError, LoopContext, Oracle, Outcome, Prompt, Resolution, Response, Transcript,
};
use crate::similarity::{CentroidCosine, FeatureStore, TieBreak};

/// How verdicts are produced for a session.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleMode {
    #[default]
    Interactive,
    Simulated {
        flip_p: f64,
        seed: u64,
    },
}

/// Fixed for the lifetime of a session; stored in the log header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub session_id: String,
    pub feature_dim: usize,
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default)]
    pub oracle: OracleMode,
    pub manifest_uri: String,
}

impl SessionConfig {
    pub fn new(session_id: impl Into<String>, feature_dim: usize, manifest_uri: impl Into<String>) -> Self {
        SessionConfig {
            session_id: session_id.into(),
            feature_dim,
            tie_break: TieBreak::default(),
            oracle: OracleMode::default(),
            manifest_uri: manifest_uri.into(),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let id = &self.session_id;
        if id.is_empty()
            || id.len() > 128
            || id.starts_with('.')
            || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(SessionError::Config(format!(
                "session id {id:?} must be 1-128 characters of [A-Za-z0-9._-] not starting with '.'"
            )));
        }
        if self.feature_dim == 0 {
            return Err(SessionError::Config("feature_dim must be positive".into()));
        }
        if let OracleMode::Simulated { flip_p, .. } = self.oracle {
            if !(0.0..=1.0).contains(&flip_p) {
                return Err(SessionError::Config(format!("flip_p {flip_p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("event seq {found} does not follow {expected}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("persisting event failed: {0}")]
    PersistFailure(#[from] LogError),
    #[error("question {submitted} is not the pending prompt")]
    StaleQuestion { submitted: u64, pending: Option<Box<Prompt>> },
    #[error("invalid answer: {0}")]
    InvalidAnswer(#[from] EpisodeError),
    #[error("{event} rejected: {reason}")]
    InvalidEvent { event: &'static str, reason: String },
    #[error("manifest: {0}")]
    Ingest(#[from] IngestError),
    #[error("hierarchy: {0}")]
    Hierarchy(#[from] HierarchyError),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortedObject {
    pub object_id: ObjectId,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerStatus {
    Applied,
    /// Same answer to an already answered prompt; nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub session_id: String,
    pub objects_total: usize,
    pub assigned: usize,
    pub aborted: usize,
    pub remaining: usize,
    pub questions_answered: u64,
    pub new_category_decisions: u64,
    pub categories: usize,
    pub max_depth: usize,
    pub mean_questions_per_object: f64,
    /// Direct members per category.
    pub category_counts: BTreeMap<LabelPath, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: CategoryId,
    pub parent: Option<CategoryId>,
    pub path: LabelPath,
    pub name: Option<String>,
    pub genus: String,
    pub differentia: String,
    pub members: usize,
    pub children: Vec<CategoryId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub assigned: usize,
    pub aborted: usize,
    pub remaining: usize,
}

/// Hierarchy snapshot plus progress, as served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub last_event: u64,
    pub done: bool,
    pub progress: Progress,
    pub nodes: Vec<NodeView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<Prompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub object_id: ObjectId,
    pub source: String,
    pub uri: String,
    pub crop: CropRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryView {
    pub category: CategoryId,
    pub path: LabelPath,
    pub descriptors: Descriptors,
    /// Most recently assigned objects of the category's subtree, newest first.
    pub exemplars: Vec<ObjectView>,
}

/// The pending prompt with what an annotator needs to answer it. For a
/// new-category prompt the category is the prospective parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextView {
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Prompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<CategoryView>,
}

pub const MAX_EXEMPLARS: usize = 6;

/// Everything derived from a session's events.
#[derive(Debug, Clone)]
pub struct SessionState {
    config: SessionConfig,
    similarity: CentroidCosine,
    loaded: bool,
    manifest: Manifest,
    queue: Vec<ObjectInstance>,
    index: HashMap<ObjectId, usize>,
    cursor: usize,
    hierarchy: Hierarchy,
    episode: Option<Episode>,
    pending: Option<Prompt>,
    /// Category created for the current episode, awaiting its assignment.
    created: Option<CategoryId>,
    transcripts: Vec<Transcript>,
    aborted: Vec<AbortedObject>,
    answered: HashMap<u64, Response>,
    last_seq: u64,
    next_prompt_seq: u64,
    verdicts: u64,
    decisions: u64,
}

macro_rules! ctx {
    ($s:expr) => {
        LoopContext {
            hierarchy: &$s.hierarchy,
            store: &$s.manifest.store,
            similarity: &$s.similarity,
        }
    };
}

fn invalid(event: &EventKind, reason: impl Into<String>) -> SessionError {
    SessionError::InvalidEvent {
        event: event.name(),
        reason: reason.into(),
    }
}

impl SessionState {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let manifest = Manifest {
            feature_dim: config.feature_dim,
            records: Vec::new(),
            store: FeatureStore::new(config.feature_dim),
        };
        Ok(SessionState {
            similarity: CentroidCosine {
                tie_break: config.tie_break,
            },
            config,
            loaded: false,
            manifest,
            queue: Vec::new(),
            index: HashMap::new(),
            cursor: 0,
            hierarchy: Hierarchy::new(),
            episode: None,
            pending: None,
            created: None,
            transcripts: Vec::new(),
            aborted: Vec::new(),
            answered: HashMap::new(),
            last_seq: 0,
            next_prompt_seq: 1,
            verdicts: 0,
            decisions: 0,
        })
    }

    /// Rebuilds a state from its events.
    pub fn replay(config: SessionConfig, events: &[SessionEvent]) -> Result<Self, SessionError> {
        let mut state = SessionState::new(config)?;
        for event in events {
            state.apply(event)?;
        }
        Ok(state)
    }

    /// Applies one event, leaving the state untouched if it is rejected.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        self.check_seq(event.seq)?;
        self.check(&event.kind)?;
        self.mutate(&event.kind)?;
        self.last_seq = event.seq;
        Ok(())
    }

    fn check_seq(&self, seq: u64) -> Result<(), SessionError> {
        if seq != self.last_seq + 1 {
            return Err(SessionError::SequenceGap {
                expected: self.last_seq + 1,
                found: seq,
            });
        }
        Ok(())
    }

    /// The prompt the engine would issue next, if no prompt is pending.
    fn expected_prompt(&self) -> Option<Prompt> {
        match &self.episode {
            Some(ep) => ep.prompt(ctx!(self)),
            None => self.queue.get(self.cursor).and_then(|o| {
                Episode::begin(o.object_id.clone(), o.feature.clone(), self.next_prompt_seq, ctx!(self))
                    .prompt(ctx!(self))
            }),
        }
    }

    fn current_object(&self) -> Option<&ObjectId> {
        self.queue.get(self.cursor).map(|o| &o.object_id)
    }

    fn check(&self, kind: &EventKind) -> Result<(), SessionError> {
        let h = &self.hierarchy;
        match kind {
            EventKind::ManifestLoaded { header, .. } => {
                if self.loaded {
                    return Err(invalid(kind, "manifest already loaded"));
                }
                if header.feature_dim != self.config.feature_dim {
                    return Err(invalid(
                        kind,
                        format!(
                            "manifest feature_dim {} differs from session feature_dim {}",
                            header.feature_dim, self.config.feature_dim
                        ),
                    ));
                }
            }
            EventKind::QuestionIssued { prompt } => {
                if !self.loaded {
                    return Err(invalid(kind, "no manifest loaded"));
                }
                if self.pending.is_some() {
                    return Err(invalid(kind, "a prompt is already pending"));
                }
                if self.expected_prompt().as_ref() != Some(prompt) {
                    return Err(invalid(kind, format!("prompt {} does not follow from the session state", prompt.seq())));
                }
            }
            EventKind::AnswerReceived { answer } => {
                let (Some(pending), Some(ep)) = (&self.pending, &self.episode) else {
                    return Err(SessionError::StaleQuestion {
                        submitted: answer.seq,
                        pending: None,
                    });
                };
                if pending.seq() != answer.seq {
                    return Err(SessionError::StaleQuestion {
                        submitted: answer.seq,
                        pending: Some(Box::new(pending.clone())),
                    });
                }
                ep.check(&answer.response, ctx!(self))?;
            }
            EventKind::CategoryCreated {
                category,
                parent,
                descriptors,
                object_id,
            } => {
                if *category != h.next_id() {
                    return Err(invalid(kind, format!("expected id {}, got {category}", h.next_id())));
                }
                h.check_new_category(*parent, descriptors)?;
                match (object_id, &self.episode) {
                    (None, None) if self.pending.is_none() => {}
                    (None, _) => return Err(invalid(kind, "seed categories cannot be added mid-episode")),
                    (Some(obj), Some(ep)) => {
                        let wanted = Resolution::Create {
                            parent: *parent,
                            descriptors: descriptors.clone(),
                        };
                        if ep.object_id() != obj || ep.resolution() != Some(&wanted) || self.created.is_some() {
                            return Err(invalid(kind, format!("episode of {obj} did not resolve to this category")));
                        }
                    }
                    (Some(obj), None) => return Err(invalid(kind, format!("no episode running for {obj}"))),
                }
            }
            EventKind::ObjectAssigned {
                object_id,
                category,
                path,
            } => {
                let Some(ep) = self.episode.as_ref().filter(|ep| ep.object_id() == object_id) else {
                    return Err(invalid(kind, format!("no episode running for {object_id}")));
                };
                let expected = match ep.resolution() {
                    Some(Resolution::Assign(c)) => Some(*c),
                    Some(Resolution::Create { .. }) => self.created,
                    None => None,
                };
                if expected != Some(*category) {
                    return Err(invalid(kind, format!("episode of {object_id} did not resolve to {category}")));
                }
                h.check_assignable(object_id, *category)?;
                if h.path_label(*category)? != *path {
                    return Err(invalid(kind, format!("{category} is not at {path}")));
                }
            }
            EventKind::EpisodeAborted { object_id, .. } => {
                if self.current_object() != Some(object_id) {
                    return Err(invalid(kind, format!("{object_id} is not the current object")));
                }
            }
        }
        Ok(())
    }

    fn mutate(&mut self, kind: &EventKind) -> Result<(), SessionError> {
        match kind {
            EventKind::ManifestLoaded { header, records } => {
                let manifest = Manifest::from_lines(*header, records.iter().cloned())?;
                self.queue = manifest.explode().objects;
                self.index = self
                    .queue
                    .iter()
                    .enumerate()
                    .map(|(i, o)| (o.object_id.clone(), i))
                    .collect();
                self.manifest = manifest;
                self.loaded = true;
            }
            EventKind::QuestionIssued { prompt } => {
                if self.episode.is_none() {
                    let o = &self.queue[self.cursor];
                    let ep = Episode::begin(o.object_id.clone(), o.feature.clone(), self.next_prompt_seq, ctx!(self));
                    self.episode = Some(ep);
                }
                self.next_prompt_seq = prompt.seq() + 1;
                self.pending = Some(prompt.clone());
            }
            EventKind::AnswerReceived { answer } => {
                let ep = self.episode.as_mut().expect("checked");
                ep.respond(answer.response.clone(), ctx!(self))?;
                match answer.response {
                    Response::Verdict(_) => self.verdicts += 1,
                    Response::NewCategory(_) => self.decisions += 1,
                }
                self.answered.insert(answer.seq, answer.response.clone());
                self.pending = None;
            }
            EventKind::CategoryCreated {
                parent,
                descriptors,
                object_id,
                ..
            } => {
                let id = self.hierarchy.add_category(*parent, descriptors.clone())?;
                if object_id.is_some() {
                    self.created = Some(id);
                }
            }
            EventKind::ObjectAssigned { object_id, category, .. } => {
                self.hierarchy.assign_object(object_id.clone(), *category)?;
                let outcome = if self.created == Some(*category) {
                    Outcome::CreatedAndAssigned(*category)
                } else {
                    Outcome::AssignedTo(*category)
                };
                let ep = self.episode.take().expect("checked");
                self.transcripts.push(ep.into_transcript(outcome));
                self.created = None;
                self.cursor += 1;
            }
            EventKind::EpisodeAborted { object_id, reason } => {
                self.episode = None;
                self.pending = None;
                self.created = None;
                self.aborted.push(AbortedObject {
                    object_id: object_id.clone(),
                    reason: reason.clone(),
                });
                self.cursor += 1;
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn manifest(&self) -> Option<&Manifest> {
        self.loaded.then_some(&self.manifest)
    }

    pub fn objects(&self) -> &[ObjectInstance] {
        &self.queue
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectInstance> {
        self.index.get(id).map(|&i| &self.queue[i])
    }

    pub fn pending(&self) -> Option<&Prompt> {
        self.pending.as_ref()
    }

    pub fn transcripts(&self) -> &[Transcript] {
        &self.transcripts
    }

    pub fn aborted(&self) -> &[AbortedObject] {
        &self.aborted
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// True once a manifest is loaded and every object has been handled.
    pub fn is_done(&self) -> bool {
        self.loaded && self.cursor >= self.queue.len()
    }

    /// Final label of every assigned object.
    pub fn labels(&self) -> BTreeMap<ObjectId, LabelPath> {
        self.transcripts
            .iter()
            .map(|t| {
                let path = self
                    .hierarchy
                    .path_label(t.outcome.category())
                    .expect("assigned categories exist");
                (t.object_id.clone(), path)
            })
            .collect()
    }

    pub fn stats(&self) -> SessionStats {
        let h = &self.hierarchy;
        let mut category_counts = BTreeMap::new();
        let mut max_depth = 0;
        for c in h.categories().filter(|c| c.id != h.root()) {
            let path = h.path_label(c.id).expect("hierarchy is a tree");
            max_depth = max_depth.max(path.depth());
            category_counts.insert(path, c.members.len());
        }
        let assigned = self.transcripts.len();
        let finished = assigned + self.aborted.len();
        SessionStats {
            session_id: self.config.session_id.clone(),
            objects_total: self.queue.len(),
            assigned,
            aborted: self.aborted.len(),
            remaining: self.queue.len() - finished,
            questions_answered: self.verdicts,
            new_category_decisions: self.decisions,
            categories: category_counts.len(),
            max_depth,
            mean_questions_per_object: if assigned == 0 {
                0.0
            } else {
                self.transcripts.iter().map(|t| t.question_count()).sum::<usize>() as f64 / assigned as f64
            },
            category_counts,
        }
    }

    pub fn state_view(&self) -> StateView {
        let h = &self.hierarchy;
        let nodes = h
            .subtree(h.root())
            .into_iter()
            .map(|id| {
                let c = h.get(id).expect("subtree ids exist");
                NodeView {
                    id,
                    parent: c.parent,
                    path: h.path_label(id).expect("hierarchy is a tree"),
                    name: c.name.clone(),
                    genus: c.genus.clone(),
                    differentia: c.differentia.clone(),
                    members: c.members.len(),
                    children: c.children.clone(),
                }
            })
            .collect();
        let stats = self.stats();
        StateView {
            session_id: self.config.session_id.clone(),
            last_event: self.last_seq,
            done: self.is_done(),
            progress: Progress {
                total: stats.objects_total,
                assigned: stats.assigned,
                aborted: stats.aborted,
                remaining: stats.remaining,
            },
            nodes,
            pending: self.pending.clone(),
        }
    }

    fn object_view(&self, id: &ObjectId) -> Option<ObjectView> {
        self.object(id).map(|o| ObjectView {
            object_id: o.object_id.clone(),
            source: o.source.clone(),
            uri: o.uri.clone(),
            crop: o.crop,
        })
    }

    /// Up to `limit` objects assigned inside `category`'s subtree, most
    /// recent first.
    pub fn exemplars(&self, category: CategoryId, limit: usize) -> Vec<ObjectView> {
        let subtree: HashSet<CategoryId> = self.hierarchy.subtree(category).into_iter().collect();
        self.transcripts
            .iter()
            .rev()
            .filter(|t| subtree.contains(&t.outcome.category()))
            .take(limit)
            .filter_map(|t| self.object_view(&t.object_id))
            .collect()
    }

    pub fn next_view(&self) -> NextView {
        let Some(prompt) = &self.pending else {
            return NextView {
                done: true,
                prompt: None,
                object: None,
                category: None,
            };
        };
        let (category, path, descriptors) = match prompt {
            Prompt::Question(q) => (q.category, q.path.clone(), q.subject.clone()),
            Prompt::NewCategory(r) => (r.parent, r.parent_path.clone(), r.parent_descriptors.clone()),
        };
        NextView {
            done: false,
            object: self.object_view(prompt.object_id()),
            category: Some(CategoryView {
                category,
                path,
                descriptors,
                exemplars: self.exemplars(category, MAX_EXEMPLARS),
            }),
            prompt: Some(prompt.clone()),
        }
    }
}

/// A session bound to the log that persists it.
pub struct Session<L: EventLog> {
    state: SessionState,
    log: L,
    clock: fn() -> DateTime<Utc>,
}

impl<L: EventLog> Session<L> {
    /// A session with no events yet; call [`Session::load`] next.
    pub fn new(config: SessionConfig, log: L) -> Result<Self, SessionError> {
        Ok(Session {
            state: SessionState::new(config)?,
            log,
            clock: Utc::now,
        })
    }

    /// Shorthand for [`Session::new`] followed by [`Session::load`].
    pub fn create(
        config: SessionConfig,
        manifest: &Manifest,
        seed: Option<&Hierarchy>,
        log: L,
    ) -> Result<Self, SessionError> {
        let mut session = Session::new(config, log)?;
        session.load(manifest, seed)?;
        Ok(session)
    }

    /// Replays `events` and continues from where they stop; if the log ends
    /// between a verdict and the next prompt, that prompt is issued now.
    pub fn resume(config: SessionConfig, events: &[SessionEvent], log: L) -> Result<Self, SessionError> {
        let mut session = Session {
            state: SessionState::replay(config, events)?,
            log,
            clock: Utc::now,
        };
        session.advance()?;
        Ok(session)
    }

    pub fn with_clock(mut self, clock: fn() -> DateTime<Utc>) -> Self {
        self.clock = clock;
        self
    }

    /// Copies `seed`'s categories (without members) into the working
    /// hierarchy, records the manifest, and issues the first prompt.
    pub fn load(&mut self, manifest: &Manifest, seed: Option<&Hierarchy>) -> Result<(), SessionError> {
        if let Some(seed) = seed {
            let mut mapped = HashMap::from([(seed.root(), self.state.hierarchy.root())]);
            for id in seed.subtree(seed.root()).into_iter().skip(1) {
                let node = seed.category(id)?;
                let parent = mapped[&node.parent.expect("non-root nodes have parents")];
                let category = self.state.hierarchy.next_id();
                self.emit(EventKind::CategoryCreated {
                    category,
                    parent,
                    descriptors: node.descriptors(),
                    object_id: None,
                })?;
                mapped.insert(id, category);
            }
        }
        // seeds go first so that any log holding the manifest also holds
        // the complete seed
        self.emit(EventKind::ManifestLoaded {
            header: manifest.header(),
            records: manifest.to_lines(),
        })?;
        self.advance()
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn pending(&self) -> Option<&Prompt> {
        self.state.pending()
    }

    pub fn is_done(&self) -> bool {
        self.state.is_done()
    }

    pub fn log(&self) -> &L {
        &self.log
    }

    pub fn into_parts(self) -> (SessionState, L) {
        (self.state, self.log)
    }

    /// Validates `event`, persists it, then applies it. A rejected or
    /// unpersisted event leaves the state unchanged.
    pub fn append_and_apply(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        self.state.check_seq(event.seq)?;
        self.state.check(&event.kind)?;
        self.log.append(&event)?;
        self.state.mutate(&event.kind)?;
        self.state.last_seq = event.seq;
        Ok(())
    }

    fn emit(&mut self, kind: EventKind) -> Result<(), SessionError> {
        let event = SessionEvent {
            seq: self.state.last_seq + 1,
            timestamp: (self.clock)(),
            kind,
        };
        self.append_and_apply(event)
    }

    /// Emits events until a prompt is pending or the queue is exhausted.
    fn advance(&mut self) -> Result<(), SessionError> {
        while self.state.loaded && self.state.pending.is_none() {
            let next = match &self.state.episode {
                Some(ep) => match ep.resolution() {
                    Some(Resolution::Create { parent, descriptors }) if self.state.created.is_none() => {
                        EventKind::CategoryCreated {
                            category: self.state.hierarchy.next_id(),
                            parent: *parent,
                            descriptors: descriptors.clone(),
                            object_id: Some(ep.object_id().clone()),
                        }
                    }
                    Some(resolution) => {
                        let category = match resolution {
                            Resolution::Assign(c) => *c,
                            Resolution::Create { .. } => self.state.created.expect("created above"),
                        };
                        EventKind::ObjectAssigned {
                            object_id: ep.object_id().clone(),
                            category,
                            path: self.state.hierarchy.path_label(category)?,
                        }
                    }
                    None => EventKind::QuestionIssued {
                        prompt: ep.prompt(ctx!(self.state)).expect("unresolved episodes prompt"),
                    },
                },
                None => match self.state.expected_prompt() {
                    Some(prompt) => EventKind::QuestionIssued { prompt },
                    None => return Ok(()),
                },
            };
            self.emit(next)?;
        }
        Ok(())
    }

    /// Submits an answer to the pending prompt. Re-submitting the answer
    /// an already answered prompt received is a no-op.
    pub fn answer(&mut self, answer: Answer) -> Result<AnswerStatus, SessionError> {
        if self.state.answered.get(&answer.seq) == Some(&answer.response) {
            return Ok(AnswerStatus::Duplicate);
        }
        self.emit(EventKind::AnswerReceived { answer })?;
        self.advance()?;
        Ok(AnswerStatus::Applied)
    }

    /// Gives up on the current object; it is listed as unassigned.
    pub fn abort(&mut self, reason: impl Into<String>) -> Result<(), SessionError> {
        let Some(object_id) = self.state.current_object().cloned() else {
            return Err(SessionError::StaleQuestion {
                submitted: 0,
                pending: None,
            });
        };
        self.emit(EventKind::EpisodeAborted {
            object_id,
            reason: reason.into(),
        })?;
        self.advance()
    }

    /// Answers every prompt from `oracle` until the queue is exhausted. An
    /// oracle failure or an invalid oracle response aborts that object's
    /// episode and moves on.
    pub fn run_with(&mut self, oracle: &mut impl Oracle) -> Result<(), SessionError> {
        while let Some(prompt) = self.state.pending.clone() {
            let response = match &prompt {
                Prompt::Question(q) => oracle.answer(q).map(Response::Verdict),
                Prompt::NewCategory(r) => oracle.describe_new(r).map(Response::NewCategory),
            };
            let result = match response {
                Ok(response) => self.answer(Answer {
                    seq: prompt.seq(),
                    response,
                }),
                Err(e) => {
                    log::warn!("oracle failed on {}: {e}", prompt.object_id());
                    self.abort(e.to_string()).map(|_| AnswerStatus::Applied)
                }
            };
            match result {
                Ok(_) => {}
                Err(SessionError::InvalidAnswer(e)) => self.abort(format!("invalid oracle response: {e}"))?,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn export(&self) -> DatasetExport {
        DatasetExport::from_state(&self.state)
    }
}

#[cfg(test)]
mod tests;
