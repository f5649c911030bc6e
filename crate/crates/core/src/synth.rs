//! Synthetic reference taxonomies and feature manifests for simulated
//! sessions.
//!
//! Features are built so that categories are linearly separable: every
//! reference node owns one axis, and an object's feature is the sum of the
//! axes along its true path plus Gaussian noise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::hierarchy::{CategoryId, Descriptors, Hierarchy, HierarchyError, HierarchyFile, LabelPath, ObjectId};
use crate::ingest::{BoxLine, Manifest, ManifestHeader, RecordLine, MANIFEST_VERSION};

/// The nine category labels of the two-annotator musical instrument study.
pub const TABLE1_PATHS: [&str; 9] = ["1", "1_1", "1_1_1", "1_1_1_1", "1_1_1_2", "1_1_2", "1_1_3", "1_2", "1_3"];
/// Per-category image counts of the first annotator (191 images).
pub const TABLE1_EXPERT1: [usize; 9] = [17, 42, 21, 21, 22, 13, 12, 33, 10];
/// Per-category image counts of the second annotator.
pub const TABLE1_EXPERT2: [usize; 9] = [17, 42, 20, 22, 22, 13, 12, 33, 10];

const IMAGE_W: u32 = 640;
const IMAGE_H: u32 = 480;
const EXTRA_DIMS: usize = 4;

pub fn reference_descriptors(path: &LabelPath) -> Descriptors {
    Descriptors {
        name: Some(format!("category {path}")),
        genus: format!("visual genus shared under {path}"),
        differentia: format!("visual differentia of {path}"),
    }
}

/// Builds a taxonomy containing exactly `paths` (plus the root). Every
/// path's parent must be present and siblings must be numbered 1..n.
pub fn taxonomy_from_paths(paths: &[LabelPath]) -> Result<Hierarchy, HierarchyError> {
    let mut sorted = paths.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut h = Hierarchy::new();
    for path in &sorted {
        let segments = path.segments();
        let Some((&ordinal, parent_segments)) = segments.split_last() else {
            continue;
        };
        let parent_path = LabelPath::from_segments(parent_segments.to_vec());
        let parent = h
            .find_path(&parent_path)
            .ok_or_else(|| HierarchyError::Format(format!("{path} has no parent in the list")))?;
        if h.children(parent).len() + 1 != ordinal as usize {
            return Err(HierarchyError::Format(format!("{path} skips a sibling ordinal")));
        }
        h.add_category(parent, reference_descriptors(path))?;
    }
    Ok(h)
}

pub fn table1_paths() -> Vec<LabelPath> {
    TABLE1_PATHS.iter().map(|p| p.parse().expect("static paths parse")).collect()
}

pub fn table1_taxonomy() -> Hierarchy {
    taxonomy_from_paths(&table1_paths()).expect("static taxonomy is well formed")
}

/// Complete tree with `branching` children per node down to `depth` levels.
pub fn full_taxonomy(branching: u32, depth: usize) -> Hierarchy {
    let mut paths = Vec::new();
    let mut frontier = vec![LabelPath::root()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for p in &frontier {
            for k in 1..=branching {
                next.push(p.child(k));
            }
        }
        paths.extend(next.iter().cloned());
        frontier = next;
    }
    taxonomy_from_paths(&paths).expect("generated paths are well formed")
}

/// Random tree with 1..=`max_branching` top-level categories and, below
/// them, 0..=`max_branching` children per node, at most `max_depth` deep.
pub fn random_taxonomy(rng: &mut impl Rng, max_branching: u32, max_depth: usize) -> Hierarchy {
    let mut paths = Vec::new();
    let mut frontier = vec![LabelPath::root()];
    for depth in 0..max_depth {
        let mut next = Vec::new();
        for p in &frontier {
            let low = if depth == 0 { 1 } else { 0 };
            let n = rng.random_range(low..=max_branching);
            for k in 1..=n {
                next.push(p.child(k));
            }
        }
        paths.extend(next.iter().cloned());
        frontier = next;
    }
    taxonomy_from_paths(&paths).expect("generated paths are well formed")
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub reference: Hierarchy,
    pub manifest: Manifest,
    pub ground_truth: BTreeMap<ObjectId, LabelPath>,
}

/// Generates `count` objects per listed path, shuffled, grouped into images
/// of one to three detections each.
pub fn synthesize(reference: &Hierarchy, counts: &[(LabelPath, usize)], seed: u64, noise: f64) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes: BTreeMap<CategoryId, usize> = reference
        .categories()
        .filter(|c| c.id != reference.root())
        .enumerate()
        .map(|(i, c)| (c.id, i))
        .collect();
    let dim = axes.len() + EXTRA_DIMS;
    let normal = Normal::new(0.0, noise.max(0.0)).expect("noise is finite");

    let mut truths: Vec<LabelPath> = counts
        .iter()
        .flat_map(|(p, n)| std::iter::repeat_n(p.clone(), *n))
        .collect();
    truths.shuffle(&mut rng);

    let feature_for = |truth: &LabelPath, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut f: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for depth in 1..=truth.depth() {
            let node = reference
                .find_path(&truth.truncated(depth))
                .expect("ground truth lies in the reference");
            f[axes[&node]] += 1.0;
        }
        f
    };

    let mut lines = Vec::new();
    let mut ground_truth = BTreeMap::new();
    let mut remaining = truths.as_slice();
    while !remaining.is_empty() {
        let take = rng.random_range(1..=3usize).min(remaining.len());
        let (batch, rest) = remaining.split_at(take);
        remaining = rest;
        let image_id = format!("img{:05}", lines.len() + 1);
        let mut boxes = Vec::new();
        for (i, truth) in batch.iter().enumerate() {
            let w = rng.random_range(16..=240u32);
            let h = rng.random_range(16..=240u32);
            boxes.push(BoxLine {
                x: rng.random_range(0..IMAGE_W - 8) as i64,
                y: rng.random_range(0..IMAGE_H - 8) as i64,
                w,
                h,
                score: (rng.random_range(50..=100u32) as f64) / 100.0,
                feature: feature_for(truth, &mut rng),
            });
            ground_truth.insert(ObjectId(format!("{image_id}#{}", i + 1)), truth.clone());
        }
        lines.push(RecordLine {
            uri: format!("images/{image_id}.jpg"),
            image_id,
            width: IMAGE_W,
            height: IMAGE_H,
            boxes,
        });
    }
    let manifest = Manifest::from_lines(
        ManifestHeader {
            version: MANIFEST_VERSION,
            feature_dim: dim,
        },
        lines,
    )
    .expect("synthetic manifest is valid");
    SyntheticDataset {
        reference: reference.clone(),
        manifest,
        ground_truth,
    }
}

/// Dataset over the nine-category reference with the given per-category counts.
pub fn table1_dataset(counts: &[usize; 9], seed: u64) -> SyntheticDataset {
    let reference = table1_taxonomy();
    let counts: Vec<_> = table1_paths().into_iter().zip(counts.iter().copied()).collect();
    synthesize(&reference, &counts, seed, 0.1)
}

/// Reference taxonomy plus ground truth, as read by the simulated oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFile {
    pub version: u32,
    pub taxonomy: HierarchyFile,
    pub ground_truth: BTreeMap<ObjectId, LabelPath>,
}

impl ReferenceFile {
    pub fn new(taxonomy: &Hierarchy, ground_truth: BTreeMap<ObjectId, LabelPath>) -> Self {
        ReferenceFile {
            version: 1,
            taxonomy: taxonomy.to_file(),
            ground_truth,
        }
    }

    pub fn taxonomy(&self) -> Result<Hierarchy, HierarchyError> {
        let h = Hierarchy::try_from(self.taxonomy.clone())?;
        let violations = h.validate();
        if violations.is_empty() {
            Ok(h)
        } else {
            Err(HierarchyError::Invalid(violations))
        }
    }
}
