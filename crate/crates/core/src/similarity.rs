//! Machine-side candidate ordering for the labeling loops.
//!
//! Each category is represented by the unit-normalized mean of the features of
//! every object in its subtree; candidates are ranked by cosine similarity to
//! the query object's feature.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{CategoryId, Hierarchy, ObjectId};

/// Score given to categories whose centroid cannot be computed.
pub const DEGENERATE_SCORE: f64 = -2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature vector has zero norm")]
    ZeroNorm,
    #[error("feature vector contains a non-finite value")]
    NonFinite,
    #[error("feature vector is empty")]
    Empty,
    #[error("category {0} has no members with stored features")]
    EmptyCategory(CategoryId),
}

/// A finite, non-zero real vector with its cached Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    norm: f64,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SimilarityError> {
        if values.is_empty() {
            return Err(SimilarityError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(SimilarityError::ZeroNorm);
        }
        Ok(FeatureVector { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn normalized(&self) -> FeatureVector {
        FeatureVector {
            values: self.values.iter().map(|v| v / self.norm).collect(),
            norm: 1.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<FeatureVector, SimilarityError> {
        FeatureVector::new(self.values.iter().map(|v| v * factor).collect())
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        FeatureVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &FeatureVector, b: &FeatureVector) -> Result<f64, SimilarityError> {
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// Object features keyed by object id, all of one declared dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureStore {
    dim: usize,
    features: HashMap<ObjectId, FeatureVector>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore {
            dim,
            features: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, id: ObjectId, feature: FeatureVector) -> Result<(), SimilarityError> {
        if feature.dim() != self.dim {
            return Err(SimilarityError::DimensionMismatch {
                expected: self.dim,
                found: feature.dim(),
            });
        }
        self.features.insert(id, feature);
        Ok(())
    }

    pub fn get(&self, id: &ObjectId) -> Option<&FeatureVector> {
        self.features.get(id)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Unit-length mean of the features of every member in `cat`'s subtree.
pub fn category_centroid(
    h: &Hierarchy,
    cat: CategoryId,
    store: &FeatureStore,
) -> Result<FeatureVector, SimilarityError> {
    h.category(cat).map_err(|_| SimilarityError::EmptyCategory(cat))?;
    let mut sum = vec![0.0; store.dim()];
    let mut count = 0usize;
    for node in h.subtree(cat) {
        for member in &h.get(node).expect("subtree yields known nodes").members {
            if let Some(f) = store.get(member) {
                for (s, v) in sum.iter_mut().zip(f.values()) {
                    *s += v;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(SimilarityError::EmptyCategory(cat));
    }
    let mean: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
    Ok(FeatureVector::new(mean)?.normalized())
}

/// Rule used to order candidates with equal scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieBreak {
    #[default]
    #[serde(rename = "ascending-id")]
    AscendingId,
}

impl fmt::Display for TieBreak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TieBreak::AscendingId => f.write_str("ascending-id"),
        }
    }
}

impl FromStr for TieBreak {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ascending-id" => Ok(TieBreak::AscendingId),
            other => Err(format!("unknown tie-break rule {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub category: CategoryId,
    pub score: f64,
    /// Set when the category has no usable centroid and was ranked last.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRanking {
    pub entries: Vec<RankedCandidate>,
    pub tie_break: TieBreak,
}

impl CandidateRanking {
    pub fn order(&self) -> Vec<CategoryId> {
        self.entries.iter().map(|e| e.category).collect()
    }

    pub fn top(&self) -> Option<&RankedCandidate> {
        self.entries.first()
    }
}

/// Orders a sibling set against an object. Implementations must be
/// deterministic and independent of the input order of `siblings`.
pub trait Similarity {
    fn rank(
        &self,
        object: &FeatureVector,
        siblings: &[CategoryId],
        h: &Hierarchy,
        store: &FeatureStore,
    ) -> CandidateRanking;
}

/// Cosine against subtree centroids.
#[derive(Debug, Clone, Copy, Default)]
pub struct CentroidCosine {
    pub tie_break: TieBreak,
}

impl Similarity for CentroidCosine {
    fn rank(
        &self,
        object: &FeatureVector,
        siblings: &[CategoryId],
        h: &Hierarchy,
        store: &FeatureStore,
    ) -> CandidateRanking {
        rank_candidates(object, siblings, h, store, self.tie_break)
    }
}

pub fn rank_candidates(
    object: &FeatureVector,
    siblings: &[CategoryId],
    h: &Hierarchy,
    store: &FeatureStore,
    tie_break: TieBreak,
) -> CandidateRanking {
    let mut entries: Vec<RankedCandidate> = siblings
        .iter()
        .map(|&category| {
            match category_centroid(h, category, store).and_then(|c| cosine(object, &c)) {
                Ok(score) => RankedCandidate {
                    category,
                    score,
                    degenerate: false,
                },
                Err(_) => RankedCandidate {
                    category,
                    score: DEGENERATE_SCORE,
                    degenerate: true,
                },
            }
        })
        .collect();
    match tie_break {
        TieBreak::AscendingId => entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.category.cmp(&b.category))
        }),
    }
    CandidateRanking { entries, tie_break }
}
