//! Interactive hierarchical labeling of detected objects.
//!
//! Objects are placed into an append-only genus/differentia taxonomy by
//! asking an annotator yes/no questions about the most similar existing
//! categories, first across the top layer and then down the matched
//! branch.

pub mod agreement;
pub mod hierarchy;
pub mod ingest;
pub mod loops;
pub mod session;
pub mod similarity;
pub mod synth;

pub use hierarchy::{CategoryId, Descriptors, Hierarchy, HierarchyError, LabelPath, ObjectId};
pub use similarity::{CentroidCosine, FeatureStore, FeatureVector, Similarity, TieBreak};
