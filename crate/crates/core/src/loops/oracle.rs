use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{NewCategoryDecision, NewCategoryRequest, Question, QuestionKind};
use crate::hierarchy::{Descriptors, Hierarchy, LabelPath, ObjectId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
    #[error("no ground truth for object {0}")]
    UnknownObject(ObjectId),
    #[error("invalid reference: {0}")]
    InvalidReference(String),
}

/// Source of genus/differentia verdicts and new-category descriptors.
pub trait Oracle {
    fn answer(&mut self, question: &Question) -> Result<bool, OracleError>;
    fn describe_new(&mut self, request: &NewCategoryRequest) -> Result<NewCategoryDecision, OracleError>;
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn answer(&mut self, question: &Question) -> Result<bool, OracleError> {
        (**self).answer(question)
    }

    fn describe_new(&mut self, request: &NewCategoryRequest) -> Result<NewCategoryDecision, OracleError> {
        (**self).describe_new(request)
    }
}

/// Replays fixed verdicts and decisions in order. Running out of either is
/// reported as an unavailable oracle.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    verdicts: VecDeque<bool>,
    decisions: VecDeque<NewCategoryDecision>,
    pub asked: Vec<Question>,
    pub requests: Vec<NewCategoryRequest>,
}

impl ScriptedOracle {
    pub fn new(verdicts: impl IntoIterator<Item = bool>) -> Self {
        ScriptedOracle {
            verdicts: verdicts.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn with_decisions(mut self, decisions: impl IntoIterator<Item = NewCategoryDecision>) -> Self {
        self.decisions = decisions.into_iter().collect();
        self
    }

    pub fn remaining(&self) -> usize {
        self.verdicts.len()
    }
}

impl Oracle for ScriptedOracle {
    fn answer(&mut self, question: &Question) -> Result<bool, OracleError> {
        self.asked.push(question.clone());
        self.verdicts
            .pop_front()
            .ok_or_else(|| OracleError::Unavailable("script exhausted".into()))
    }

    fn describe_new(&mut self, request: &NewCategoryRequest) -> Result<NewCategoryDecision, OracleError> {
        self.requests.push(request.clone());
        self.decisions
            .pop_front()
            .ok_or_else(|| OracleError::Unavailable("no scripted decision".into()))
    }
}

/// Test double for a human annotator, answering from a reference taxonomy.
///
/// Working-hierarchy categories are matched to reference nodes by their
/// descriptors (name, genus, differentia), which is exactly what
/// `describe_new` hands out, so nodes the engine creates from its answers
/// map back to the reference node they were copied from. Each verdict is
/// flipped independently with probability `flip_p`; the draw for a question
/// depends only on `(seed, object, seq)`, so replays and resumed sessions
/// see the same answers.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    by_descriptors: HashMap<Descriptors, LabelPath>,
    by_path: BTreeMap<LabelPath, Descriptors>,
    ground_truth: HashMap<ObjectId, LabelPath>,
    flip_p: f64,
    seed: u64,
}

impl SimulatedOracle {
    pub fn new(
        reference: &Hierarchy,
        ground_truth: impl IntoIterator<Item = (ObjectId, LabelPath)>,
        flip_p: f64,
        seed: u64,
    ) -> Result<Self, OracleError> {
        if !(0.0..=1.0).contains(&flip_p) {
            return Err(OracleError::InvalidReference(format!("flip probability {flip_p} outside [0, 1]")));
        }
        let mut by_descriptors = HashMap::new();
        let mut by_path = BTreeMap::new();
        for node in reference.categories() {
            let path = reference
                .path_label(node.id)
                .map_err(|e| OracleError::InvalidReference(e.to_string()))?;
            if let Some(other) = by_descriptors.insert(node.descriptors(), path.clone()) {
                return Err(OracleError::InvalidReference(format!(
                    "categories {other} and {path} have identical descriptors"
                )));
            }
            by_path.insert(path, node.descriptors());
        }
        let ground_truth: HashMap<_, _> = ground_truth.into_iter().collect();
        if let Some((obj, path)) = ground_truth
            .iter()
            .find(|(_, p)| p.is_root() || !by_path.contains_key(*p))
        {
            return Err(OracleError::InvalidReference(format!(
                "ground truth {path} of {obj} is not in the reference"
            )));
        }
        Ok(SimulatedOracle {
            by_descriptors,
            by_path,
            ground_truth,
            flip_p,
            seed,
        })
    }

    pub fn flip_p(&self) -> f64 {
        self.flip_p
    }

    fn truth(&self, object: &ObjectId) -> Result<&LabelPath, OracleError> {
        self.ground_truth
            .get(object)
            .ok_or_else(|| OracleError::UnknownObject(object.clone()))
    }

    fn reference_path(&self, d: &Descriptors) -> Option<&LabelPath> {
        self.by_descriptors.get(d)
    }

    /// The noise-free verdict for a question.
    pub fn truthful(&self, question: &Question) -> Result<bool, OracleError> {
        let truth = self.truth(&question.object_id)?;
        let on_path = self
            .reference_path(&question.subject)
            .is_some_and(|p| !p.is_root() && p.is_prefix_of(truth));
        Ok(match question.kind {
            QuestionKind::Genus => on_path,
            QuestionKind::Differentia => !on_path,
        })
    }

    fn flips(&self, object: &ObjectId, seq: u64) -> bool {
        if self.flip_p <= 0.0 {
            return false;
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(object.as_str().as_bytes());
        hasher.update(seq.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        rng.random::<f64>() < self.flip_p
    }
}

impl Oracle for SimulatedOracle {
    fn answer(&mut self, question: &Question) -> Result<bool, OracleError> {
        let truthful = self.truthful(question)?;
        Ok(truthful ^ self.flips(&question.object_id, question.seq))
    }

    /// Describes the reference node one level below the parent on the
    /// object's true path. When that node already exists under the parent
    /// (an earlier wrong answer skipped it), when the parent is the true
    /// category itself, or when the episode left the true path, the object
    /// stays at the parent; at the top layer, where that is not allowed, it
    /// gets a new category of its own that matches no reference node.
    fn describe_new(&mut self, request: &NewCategoryRequest) -> Result<NewCategoryDecision, OracleError> {
        let truth = self.truth(&request.object_id)?.clone();
        let target = self
            .reference_path(&request.parent_descriptors)
            .filter(|p| p.is_prefix_of(&truth) && p.depth() < truth.depth())
            .map(|p| &self.by_path[&truth.truncated(p.depth() + 1)])
            .filter(|d| !request.existing_children.contains(d));
        match target {
            Some(d) => Ok(NewCategoryDecision::Create(d.clone())),
            None if request.may_keep_at_parent => Ok(NewCategoryDecision::KeepAtParent),
            None if request.parent_path.is_root() => Ok(NewCategoryDecision::Create(unmatched(&request.object_id))),
            None => Err(OracleError::InvalidReference(format!(
                "cannot describe a category for {} under {}",
                request.object_id, request.parent_path
            ))),
        }
    }
}

fn unmatched(object: &ObjectId) -> Descriptors {
    Descriptors {
        name: Some(format!("unmatched group of {object}")),
        genus: format!("visual genus observed on {object}"),
        differentia: format!("what sets {object} apart from the existing categories"),
    }
}
