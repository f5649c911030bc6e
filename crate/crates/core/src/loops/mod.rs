//! Vertical and horizontal labeling loops.
//!
//! An [`Episode`] walks one object down the hierarchy. It starts with a sweep
//! over the root's children in similarity order, asking a genus question per
//! category (vertical loop). The first affirmed category becomes the
//! candidate; its children are then swept with differentia questions
//! (horizontal loop), descending into the first child the object is *not*
//! distinct from, until a leaf is reached or every child is distinct. An
//! exhausted sweep ends in a new-category decision.
//!
//! The episode is a pure state machine: it never mutates the hierarchy.
//! Mutations are described by the final [`Resolution`] and applied at once,
//! so an aborted episode leaves no trace.

mod oracle;

pub use oracle::{Oracle, OracleError, ScriptedOracle, SimulatedOracle};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{CategoryId, Descriptors, Hierarchy, HierarchyError, LabelPath, ObjectId};
use crate::ingest::ObjectInstance;
use crate::similarity::{CentroidCosine, FeatureStore, FeatureVector, Similarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionKind {
    Genus,
    Differentia,
}

/// A yes/no question about one category.
///
/// Polarity: a genus answer of `true` means the object shares the
/// category's genus; a differentia answer of `true` means the object is
/// distinct from the category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub seq: u64,
    pub kind: QuestionKind,
    pub object_id: ObjectId,
    pub category: CategoryId,
    pub path: LabelPath,
    pub subject: Descriptors,
    pub prompt: String,
}

/// Request for the descriptors of a new category under `parent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewCategoryRequest {
    pub seq: u64,
    pub object_id: ObjectId,
    pub parent: CategoryId,
    pub parent_path: LabelPath,
    pub parent_descriptors: Descriptors,
    pub requires_differentia: bool,
    /// Descriptors of the categories already under `parent`.
    pub existing_children: Vec<Descriptors>,
    /// Whether the object may instead stay at `parent` itself.
    pub may_keep_at_parent: bool,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Prompt {
    Question(Question),
    NewCategory(NewCategoryRequest),
}

impl Prompt {
    pub fn seq(&self) -> u64 {
        match self {
            Prompt::Question(q) => q.seq,
            Prompt::NewCategory(r) => r.seq,
        }
    }

    pub fn object_id(&self) -> &ObjectId {
        match self {
            Prompt::Question(q) => &q.object_id,
            Prompt::NewCategory(r) => &r.object_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewCategoryDecision {
    Create(Descriptors),
    KeepAtParent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Verdict(bool),
    NewCategory(NewCategoryDecision),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub seq: u64,
    pub response: Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub question: Question,
    pub verdict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    AssignedTo(CategoryId),
    CreatedAndAssigned(CategoryId),
}

impl Outcome {
    pub fn category(&self) -> CategoryId {
        match *self {
            Outcome::AssignedTo(c) | Outcome::CreatedAndAssigned(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub object_id: ObjectId,
    pub steps: Vec<TranscriptStep>,
    pub decision: Option<NewCategoryDecision>,
    pub outcome: Outcome,
}

impl Transcript {
    pub fn question_count(&self) -> usize {
        self.steps.len()
    }
}

/// What an episode asks the hierarchy to do once it is over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Assign(CategoryId),
    Create { parent: CategoryId, descriptors: Descriptors },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchyDelta {
    pub created: Option<CategoryId>,
    pub assigned: CategoryId,
}

#[derive(Debug, Error, PartialEq)]
pub enum EpisodeError {
    #[error("episode is already resolved")]
    Resolved,
    #[error("expected a {expected} response")]
    WrongResponseKind { expected: &'static str },
    #[error("invalid new category: {0}")]
    InvalidNewCategory(HierarchyError),
    #[error("a new category is required here; the object cannot stay at {0}")]
    KeepNotAllowed(CategoryId),
}

#[derive(Debug, Error, PartialEq)]
pub enum LoopError {
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Read-only inputs shared by every step of an episode.
#[derive(Clone, Copy)]
pub struct LoopContext<'a> {
    pub hierarchy: &'a Hierarchy,
    pub store: &'a FeatureStore,
    pub similarity: &'a dyn Similarity,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Sweep {
        kind: QuestionKind,
        anchor: CategoryId,
        order: Vec<CategoryId>,
        next: usize,
    },
    AwaitNew {
        parent: CategoryId,
        keep_allowed: bool,
    },
    Resolved(Resolution),
}

/// A layer the episode swept: its parent node and how many categories it held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerVisit {
    pub anchor: CategoryId,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    object_id: ObjectId,
    feature: FeatureVector,
    next_seq: u64,
    phase: Phase,
    steps: Vec<TranscriptStep>,
    layers: Vec<LayerVisit>,
    matched: Option<CategoryId>,
    decision: Option<NewCategoryDecision>,
}

impl Episode {
    /// Starts at the root layer. `first_seq` numbers the first prompt.
    pub fn begin(object_id: ObjectId, feature: FeatureVector, first_seq: u64, ctx: LoopContext<'_>) -> Self {
        let root = ctx.hierarchy.root();
        Self::vertical_at(object_id, feature, root, first_seq, ctx)
    }

    /// Starts a genus sweep over the children of `anchor`.
    pub fn vertical_at(
        object_id: ObjectId,
        feature: FeatureVector,
        anchor: CategoryId,
        first_seq: u64,
        ctx: LoopContext<'_>,
    ) -> Self {
        let mut episode = Episode {
            object_id,
            feature,
            next_seq: first_seq,
            phase: Phase::AwaitNew {
                parent: anchor,
                keep_allowed: false,
            },
            steps: Vec::new(),
            layers: Vec::new(),
            matched: None,
            decision: None,
        };
        episode.enter_sweep(QuestionKind::Genus, anchor, ctx);
        episode
    }

    /// Starts the horizontal loop at a candidate already affirmed by genus.
    pub fn horizontal_at(
        object_id: ObjectId,
        feature: FeatureVector,
        candidate: CategoryId,
        first_seq: u64,
        ctx: LoopContext<'_>,
    ) -> Self {
        let mut episode = Episode {
            object_id,
            feature,
            next_seq: first_seq,
            phase: Phase::Resolved(Resolution::Assign(candidate)),
            steps: Vec::new(),
            layers: Vec::new(),
            matched: Some(candidate),
            decision: None,
        };
        episode.refine(candidate, ctx);
        episode
    }

    pub fn object_id(&self) -> &ObjectId {
        &self.object_id
    }

    pub fn steps(&self) -> &[TranscriptStep] {
        &self.steps
    }

    pub fn layers(&self) -> &[LayerVisit] {
        &self.layers
    }

    /// The candidate affirmed by the vertical loop, once there is one.
    pub fn matched(&self) -> Option<CategoryId> {
        self.matched
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn resolution(&self) -> Option<&Resolution> {
        match &self.phase {
            Phase::Resolved(r) => Some(r),
            _ => None,
        }
    }

    /// True while the vertical (genus) sweep is still running.
    pub fn in_vertical_sweep(&self) -> bool {
        self.matched.is_none()
    }

    fn enter_sweep(&mut self, kind: QuestionKind, anchor: CategoryId, ctx: LoopContext<'_>) {
        let children = ctx.hierarchy.children(anchor);
        // rankings are frozen for the lifetime of the sweep
        let order = ctx
            .similarity
            .rank(&self.feature, children, ctx.hierarchy, ctx.store)
            .order();
        self.layers.push(LayerVisit {
            anchor,
            size: order.len(),
        });
        self.phase = if order.is_empty() {
            Phase::AwaitNew {
                parent: anchor,
                keep_allowed: false,
            }
        } else {
            Phase::Sweep {
                kind,
                anchor,
                order,
                next: 0,
            }
        };
    }

    /// Continue refinement below `node`: a leaf takes the object, otherwise
    /// its children are swept with differentia questions.
    fn refine(&mut self, node: CategoryId, ctx: LoopContext<'_>) {
        if ctx.hierarchy.children(node).is_empty() {
            self.phase = Phase::Resolved(Resolution::Assign(node));
        } else {
            self.enter_sweep(QuestionKind::Differentia, node, ctx);
        }
    }

    /// The prompt awaiting a response, or `None` once resolved.
    pub fn prompt(&self, ctx: LoopContext<'_>) -> Option<Prompt> {
        let h = ctx.hierarchy;
        match &self.phase {
            Phase::Sweep { kind, order, next, .. } => {
                let category = order[*next];
                let node = h.get(category).expect("ranked categories exist");
                let path = h.path_label(category).expect("hierarchy is a tree");
                let prompt = render_question(*kind, &self.object_id, &path, &node.descriptors());
                Some(Prompt::Question(Question {
                    seq: self.next_seq,
                    kind: *kind,
                    object_id: self.object_id.clone(),
                    category,
                    path,
                    subject: node.descriptors(),
                    prompt,
                }))
            }
            Phase::AwaitNew { parent, keep_allowed } => {
                let node = h.get(*parent).expect("parent exists");
                let parent_path = h.path_label(*parent).expect("hierarchy is a tree");
                let requires_differentia = !node.children.is_empty();
                let prompt = render_new_category(&self.object_id, &parent_path, *keep_allowed, requires_differentia);
                Some(Prompt::NewCategory(NewCategoryRequest {
                    seq: self.next_seq,
                    object_id: self.object_id.clone(),
                    parent: *parent,
                    parent_path,
                    parent_descriptors: node.descriptors(),
                    requires_differentia,
                    existing_children: node
                        .children
                        .iter()
                        .map(|&c| h.get(c).expect("children exist").descriptors())
                        .collect(),
                    may_keep_at_parent: *keep_allowed,
                    prompt,
                }))
            }
            Phase::Resolved(_) => None,
        }
    }

    /// Checks a response against the pending prompt without applying it.
    pub fn check(&self, response: &Response, ctx: LoopContext<'_>) -> Result<(), EpisodeError> {
        match (&self.phase, response) {
            (Phase::Resolved(_), _) => Err(EpisodeError::Resolved),
            (Phase::Sweep { .. }, Response::Verdict(_)) => Ok(()),
            (Phase::Sweep { .. }, _) => Err(EpisodeError::WrongResponseKind { expected: "verdict" }),
            (Phase::AwaitNew { parent, keep_allowed }, Response::NewCategory(decision)) => match decision {
                NewCategoryDecision::KeepAtParent if !keep_allowed => Err(EpisodeError::KeepNotAllowed(*parent)),
                NewCategoryDecision::KeepAtParent => Ok(()),
                NewCategoryDecision::Create(d) => {
                    if d.genus.trim().is_empty() {
                        return Err(EpisodeError::InvalidNewCategory(HierarchyError::EmptyGenus));
                    }
                    if !ctx.hierarchy.children(*parent).is_empty() && d.differentia.trim().is_empty() {
                        return Err(EpisodeError::InvalidNewCategory(HierarchyError::EmptyDifferentia(*parent)));
                    }
                    Ok(())
                }
            },
            (Phase::AwaitNew { .. }, _) => Err(EpisodeError::WrongResponseKind {
                expected: "new category",
            }),
        }
    }

    pub fn respond(&mut self, response: Response, ctx: LoopContext<'_>) -> Result<(), EpisodeError> {
        self.check(&response, ctx)?;
        let question = match self.prompt(ctx) {
            Some(Prompt::Question(q)) => Some(q),
            _ => None,
        };
        self.next_seq += 1;
        let phase = std::mem::replace(&mut self.phase, Phase::Resolved(Resolution::Assign(ctx.hierarchy.root())));
        match (phase, response) {
            (
                Phase::Sweep {
                    kind,
                    anchor,
                    order,
                    next,
                },
                Response::Verdict(verdict),
            ) => {
                let category = order[next];
                self.steps.push(TranscriptStep {
                    question: question.expect("sweeps ask questions"),
                    verdict,
                });
                // genus: true = shares genus; differentia: false = same category
                let descend = match kind {
                    QuestionKind::Genus => verdict,
                    QuestionKind::Differentia => !verdict,
                };
                if descend {
                    if kind == QuestionKind::Genus {
                        self.matched = Some(category);
                    }
                    self.refine(category, ctx);
                } else if next + 1 < order.len() {
                    self.phase = Phase::Sweep {
                        kind,
                        anchor,
                        order,
                        next: next + 1,
                    };
                } else {
                    self.phase = Phase::AwaitNew {
                        parent: anchor,
                        keep_allowed: kind == QuestionKind::Differentia,
                    };
                }
            }
            (Phase::AwaitNew { parent, .. }, Response::NewCategory(decision)) => {
                self.phase = Phase::Resolved(match &decision {
                    NewCategoryDecision::Create(d) => Resolution::Create {
                        parent,
                        descriptors: d.clone(),
                    },
                    NewCategoryDecision::KeepAtParent => Resolution::Assign(parent),
                });
                self.decision = Some(decision);
            }
            _ => unreachable!("response kind checked above"),
        }
        Ok(())
    }

    /// Turns a resolved episode into its transcript once the hierarchy has
    /// recorded `outcome`.
    pub fn into_transcript(self, outcome: Outcome) -> Transcript {
        Transcript {
            object_id: self.object_id,
            steps: self.steps,
            decision: self.decision,
            outcome,
        }
    }

    /// Applies the resolution to `h` atomically: either both the (optional)
    /// new node and the assignment happen, or neither does.
    pub fn commit(self, h: &mut Hierarchy) -> Result<(Transcript, HierarchyDelta), LoopError> {
        let resolution = self.resolution().cloned().ok_or(EpisodeError::WrongResponseKind {
            expected: "resolved episode",
        })?;
        let object = self.object_id.clone();
        let (outcome, created) = match resolution {
            Resolution::Assign(cat) => {
                h.assign_object(object, cat)?;
                (Outcome::AssignedTo(cat), None)
            }
            Resolution::Create { parent, descriptors } => {
                if let Some(category) = h.category_of(&object) {
                    return Err(HierarchyError::AlreadyAssigned { object, category }.into());
                }
                let cat = h.add_category(parent, descriptors)?;
                h.assign_object(object, cat)?;
                (Outcome::CreatedAndAssigned(cat), Some(cat))
            }
        };
        let transcript = self.into_transcript(outcome);
        Ok((
            transcript,
            HierarchyDelta {
                created,
                assigned: outcome.category(),
            },
        ))
    }
}

fn render_question(kind: QuestionKind, object: &ObjectId, path: &LabelPath, d: &Descriptors) -> String {
    let named = d.name.as_deref().map(|n| format!(" \"{n}\"")).unwrap_or_default();
    match kind {
        QuestionKind::Genus => format!(
            "Does object {object} share the visual genus of category {path}{named}: {}?",
            d.genus
        ),
        QuestionKind::Differentia => format!(
            "Is object {object} visually distinct from category {path}{named}, whose differentia is: {}?",
            d.differentia
        ),
    }
}

fn render_new_category(object: &ObjectId, parent: &LabelPath, keep_allowed: bool, requires_differentia: bool) -> String {
    let place = if parent.is_root() {
        "the top layer".to_string()
    } else {
        format!("category {parent}")
    };
    let mut text = format!("Object {object} fits no existing category under {place}. Describe a new category (visual genus");
    text.push_str(if requires_differentia {
        " and differentia from its siblings required)"
    } else {
        " required)"
    });
    if keep_allowed {
        text.push_str(&format!(", or keep the object at {place}"));
    }
    text.push('.');
    text
}

/// Result of a vertical sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerticalOutcome {
    Matched(CategoryId),
    CreatedNew(CategoryId),
}

/// Synchronous driver that runs episodes against an [`Oracle`] and applies
/// their outcomes. Prompt sequence numbers run on across objects.
pub struct Labeler<S: Similarity = CentroidCosine> {
    pub similarity: S,
    next_seq: u64,
}

impl Default for Labeler<CentroidCosine> {
    fn default() -> Self {
        Labeler::new(CentroidCosine::default())
    }
}

impl<S: Similarity> Labeler<S> {
    pub fn new(similarity: S) -> Self {
        Labeler { similarity, next_seq: 1 }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn ctx<'a>(&'a self, h: &'a Hierarchy, store: &'a FeatureStore) -> LoopContext<'a> {
        LoopContext {
            hierarchy: h,
            store,
            similarity: &self.similarity,
        }
    }

    /// Answers prompts until the episode resolves, or, with `stop_on_match`,
    /// until the vertical sweep has affirmed a candidate.
    fn drive(
        &mut self,
        episode: &mut Episode,
        h: &Hierarchy,
        store: &FeatureStore,
        oracle: &mut dyn Oracle,
        stop_on_match: bool,
    ) -> Result<(), LoopError> {
        let ctx = LoopContext {
            hierarchy: h,
            store,
            similarity: &self.similarity,
        };
        while let Some(prompt) = episode.prompt(ctx) {
            if stop_on_match && episode.matched().is_some() {
                break;
            }
            let response = match &prompt {
                Prompt::Question(q) => Response::Verdict(oracle.answer(q).map_err(unavailable)?),
                Prompt::NewCategory(r) => Response::NewCategory(oracle.describe_new(r).map_err(unavailable)?),
            };
            episode.respond(response, ctx)?;
        }
        self.next_seq = episode.next_seq();
        Ok(())
    }

    /// Genus sweep over the children of `anchor`. On exhaustion a new
    /// category is created under `anchor` and the object assigned to it.
    pub fn vertical_loop(
        &mut self,
        obj: &ObjectInstance,
        anchor: CategoryId,
        h: &mut Hierarchy,
        store: &FeatureStore,
        oracle: &mut dyn Oracle,
    ) -> Result<(VerticalOutcome, Vec<TranscriptStep>), LoopError> {
        let mut episode = Episode::vertical_at(
            obj.object_id.clone(),
            obj.feature.clone(),
            anchor,
            self.next_seq,
            self.ctx(h, store),
        );
        self.drive(&mut episode, h, store, oracle, true)?;
        if let Some(candidate) = episode.matched() {
            return Ok((VerticalOutcome::Matched(candidate), episode.steps));
        }
        let (transcript, delta) = episode.commit(h)?;
        let created = delta.created.expect("exhausted vertical sweep creates a category");
        Ok((VerticalOutcome::CreatedNew(created), transcript.steps))
    }

    /// Differentia refinement below a candidate affirmed by genus.
    pub fn horizontal_loop(
        &mut self,
        obj: &ObjectInstance,
        candidate: CategoryId,
        h: &mut Hierarchy,
        store: &FeatureStore,
        oracle: &mut dyn Oracle,
    ) -> Result<(Transcript, HierarchyDelta), LoopError> {
        let mut episode = Episode::horizontal_at(
            obj.object_id.clone(),
            obj.feature.clone(),
            candidate,
            self.next_seq,
            self.ctx(h, store),
        );
        self.drive(&mut episode, h, store, oracle, false)?;
        episode.commit(h)
    }

    /// One full episode: vertical loop at the root layer, then horizontal
    /// refinement. On error the hierarchy is left untouched.
    pub fn label_object(
        &mut self,
        obj: &ObjectInstance,
        h: &mut Hierarchy,
        store: &FeatureStore,
        oracle: &mut dyn Oracle,
    ) -> Result<(Transcript, HierarchyDelta), LoopError> {
        let mut episode = Episode::begin(obj.object_id.clone(), obj.feature.clone(), self.next_seq, self.ctx(h, store));
        self.drive(&mut episode, h, store, oracle, false)?;
        episode.commit(h)
    }
}

fn unavailable(e: OracleError) -> LoopError {
    match e {
        OracleError::Unavailable(msg) => LoopError::OracleUnavailable(msg),
        other => LoopError::Oracle(other),
    }
}
