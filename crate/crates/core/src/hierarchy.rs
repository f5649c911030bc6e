//! Visual-subsumption hierarchy.
//!
//! The tree is append-only: nodes are never removed or re-parented, so a
//! category's ordinal path label ("1", "1_1", "1_1_2", ...) never changes once
//! assigned. The root is a virtual node with no label, no members and no
//! descriptors; the first layer of real categories are its children.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a category node, assigned monotonically within a hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u64);

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Identifier of a localized single-object instance (`<image_id>#<ordinal>`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub String);

impl ObjectId {
    pub fn new(id: impl Into<String>) -> Self {
        ObjectId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        ObjectId(s.to_string())
    }
}

/// Ordinal path from the root, rendered underscore-joined (`1_1_2`).
///
/// Ordering is lexicographic over the segments, which lists a parent before
/// its descendants and siblings in creation order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LabelPath(Vec<u32>);

impl LabelPath {
    pub fn root() -> Self {
        LabelPath(Vec::new())
    }

    pub fn from_segments(segments: Vec<u32>) -> Self {
        LabelPath(segments)
    }

    pub fn segments(&self) -> &[u32] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, ordinal: u32) -> Self {
        let mut segments = self.0.clone();
        segments.push(ordinal);
        LabelPath(segments)
    }

    /// True when `self` equals `other` or is one of its ancestors.
    pub fn is_prefix_of(&self, other: &LabelPath) -> bool {
        other.0.starts_with(&self.0)
    }

    /// The first `depth` segments.
    pub fn truncated(&self, depth: usize) -> Self {
        LabelPath(self.0[..depth.min(self.0.len())].to_vec())
    }
}

impl fmt::Display for LabelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("_")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid label path {0:?}")]
pub struct LabelPathParseError(pub String);

impl FromStr for LabelPath {
    type Err = LabelPathParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Ok(LabelPath::root());
        }
        s.split('_')
            .map(|seg| match seg.parse::<u32>() {
                Ok(n) if n > 0 && !seg.starts_with('+') => Ok(n),
                _ => Err(LabelPathParseError(s.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(LabelPath)
    }
}

impl Serialize for LabelPath {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelPath {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Genus/differentia descriptors plus the optional lexical name of a node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Descriptors {
    pub name: Option<String>,
    pub genus: String,
    pub differentia: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub id: CategoryId,
    pub parent: Option<CategoryId>,
    pub name: Option<String>,
    pub genus: String,
    pub differentia: String,
    pub members: Vec<ObjectId>,
    pub children: Vec<CategoryId>,
}

impl Category {
    pub fn descriptors(&self) -> Descriptors {
        Descriptors {
            name: self.name.clone(),
            genus: self.genus.clone(),
            differentia: self.differentia.clone(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HierarchyError {
    #[error("unknown parent category {0}")]
    UnknownParent(CategoryId),
    #[error("unknown category {0}")]
    UnknownCategory(CategoryId),
    #[error("a new category needs a non-empty visual genus")]
    EmptyGenus,
    #[error("parent {0} already has children; a new sibling needs a non-empty differentia")]
    EmptyDifferentia(CategoryId),
    #[error("object {object} is already assigned to {category}")]
    AlreadyAssigned { object: ObjectId, category: CategoryId },
    #[error("objects cannot be assigned to the root")]
    RootAssignment,
    #[error("parent links of {0} do not lead back to the root")]
    BrokenAncestry(CategoryId),
    #[error("malformed hierarchy file: {0}")]
    Format(String),
    #[error("hierarchy failed validation: {0:?}")]
    Invalid(Vec<Violation>),
}

/// A broken structural rule, reported by [`Hierarchy::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    RootMissing,
    RootHasParent,
    RootHasMembers,
    RootHasDescriptors,
    OrphanNode,
    UnknownParent,
    UnknownChild,
    DuplicateChild,
    ParentChildMismatch,
    CycleDetected,
    Unreachable,
    EmptyGenus,
    EmptyDifferentia,
    MemberAssignedTwice,
    DuplicatePathLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub node: CategoryId,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    nodes: BTreeMap<CategoryId, Category>,
    root: CategoryId,
    next_id: u64,
    assignments: HashMap<ObjectId, CategoryId>,
}

impl Default for Hierarchy {
    fn default() -> Self {
        Self::new()
    }
}

impl Hierarchy {
    /// A hierarchy holding only the virtual root.
    pub fn new() -> Self {
        let root = CategoryId(0);
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root,
            Category {
                id: root,
                parent: None,
                name: None,
                genus: String::new(),
                differentia: String::new(),
                members: Vec::new(),
                children: Vec::new(),
            },
        );
        Hierarchy {
            nodes,
            root,
            next_id: 1,
            assignments: HashMap::new(),
        }
    }

    pub fn root(&self) -> CategoryId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn next_id(&self) -> CategoryId {
        CategoryId(self.next_id)
    }

    pub fn get(&self, id: CategoryId) -> Option<&Category> {
        self.nodes.get(&id)
    }

    pub fn category(&self, id: CategoryId) -> Result<&Category, HierarchyError> {
        self.nodes.get(&id).ok_or(HierarchyError::UnknownCategory(id))
    }

    pub fn children(&self, id: CategoryId) -> &[CategoryId] {
        self.nodes.get(&id).map(|c| c.children.as_slice()).unwrap_or(&[])
    }

    /// All nodes in ascending id order, root included.
    pub fn categories(&self) -> impl Iterator<Item = &Category> {
        self.nodes.values()
    }

    pub fn member_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn category_of(&self, object: &ObjectId) -> Option<CategoryId> {
        self.assignments.get(object).copied()
    }

    pub fn add_category(
        &mut self,
        parent: CategoryId,
        descriptors: Descriptors,
    ) -> Result<CategoryId, HierarchyError> {
        self.check_new_category(parent, &descriptors)?;
        let id = CategoryId(self.next_id);
        self.next_id += 1;
        self.nodes.insert(
            id,
            Category {
                id,
                parent: Some(parent),
                name: descriptors.name,
                genus: descriptors.genus,
                differentia: descriptors.differentia,
                members: Vec::new(),
                children: Vec::new(),
            },
        );
        self.nodes
            .get_mut(&parent)
            .expect("parent checked above")
            .children
            .push(id);
        Ok(id)
    }

    /// Checks the preconditions of [`Hierarchy::add_category`] without mutating.
    pub fn check_new_category(&self, parent: CategoryId, descriptors: &Descriptors) -> Result<(), HierarchyError> {
        let parent_node = self
            .nodes
            .get(&parent)
            .ok_or(HierarchyError::UnknownParent(parent))?;
        if descriptors.genus.trim().is_empty() {
            return Err(HierarchyError::EmptyGenus);
        }
        if !parent_node.children.is_empty() && descriptors.differentia.trim().is_empty() {
            return Err(HierarchyError::EmptyDifferentia(parent));
        }
        Ok(())
    }

    /// Checks the preconditions of [`Hierarchy::assign_object`] without mutating.
    pub fn check_assignable(&self, object: &ObjectId, cat: CategoryId) -> Result<(), HierarchyError> {
        if !self.nodes.contains_key(&cat) {
            return Err(HierarchyError::UnknownCategory(cat));
        }
        if cat == self.root {
            return Err(HierarchyError::RootAssignment);
        }
        if let Some(&category) = self.assignments.get(object) {
            return Err(HierarchyError::AlreadyAssigned {
                object: object.clone(),
                category,
            });
        }
        Ok(())
    }

    pub fn assign_object(&mut self, object: ObjectId, cat: CategoryId) -> Result<(), HierarchyError> {
        self.check_assignable(&object, cat)?;
        self.assignments.insert(object.clone(), cat);
        self.nodes
            .get_mut(&cat)
            .expect("category checked above")
            .members
            .push(object);
        Ok(())
    }

    pub fn path_label(&self, id: CategoryId) -> Result<LabelPath, HierarchyError> {
        let mut segments = Vec::new();
        let mut current = self.category(id)?;
        // A well-formed tree is never deeper than its node count.
        for _ in 0..=self.nodes.len() {
            let Some(parent_id) = current.parent else {
                if current.id != self.root {
                    return Err(HierarchyError::BrokenAncestry(id));
                }
                segments.reverse();
                return Ok(LabelPath(segments));
            };
            let parent = self
                .nodes
                .get(&parent_id)
                .ok_or(HierarchyError::BrokenAncestry(id))?;
            let ordinal = parent
                .children
                .iter()
                .position(|&c| c == current.id)
                .ok_or(HierarchyError::BrokenAncestry(id))?;
            segments.push(ordinal as u32 + 1);
            current = parent;
        }
        Err(HierarchyError::BrokenAncestry(id))
    }

    /// Resolves an ordinal path back to its node.
    pub fn find_path(&self, path: &LabelPath) -> Option<CategoryId> {
        let mut current = self.root;
        for &ordinal in path.segments() {
            current = *self.children(current).get(ordinal.checked_sub(1)? as usize)?;
        }
        Some(current)
    }

    /// Every node reachable from `id`, `id` first, in depth-first preorder.
    pub fn subtree(&self, id: CategoryId) -> Vec<CategoryId> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(next) = stack.pop() {
            if !self.nodes.contains_key(&next) || !seen.insert(next) {
                continue;
            }
            out.push(next);
            stack.extend(self.children(next).iter().rev());
        }
        out
    }

    /// Copy of the tree structure and descriptors with all members removed.
    pub fn skeleton(&self) -> Hierarchy {
        let mut copy = self.clone();
        for node in copy.nodes.values_mut() {
            node.members.clear();
        }
        copy.assignments.clear();
        copy
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = BTreeSet::new();
        let mut push = |node: CategoryId, rule: Rule| {
            out.insert(Violation { node, rule });
        };

        match self.nodes.get(&self.root) {
            None => push(self.root, Rule::RootMissing),
            Some(root) => {
                if root.parent.is_some() {
                    push(root.id, Rule::RootHasParent);
                }
                if !root.members.is_empty() {
                    push(root.id, Rule::RootHasMembers);
                }
                if !root.genus.is_empty() || !root.differentia.is_empty() {
                    push(root.id, Rule::RootHasDescriptors);
                }
            }
        }

        let mut seen_members: HashMap<&ObjectId, CategoryId> = HashMap::new();
        for node in self.nodes.values() {
            if node.id != self.root {
                match node.parent {
                    None => push(node.id, Rule::OrphanNode),
                    Some(p) => match self.nodes.get(&p) {
                        None => push(node.id, Rule::UnknownParent),
                        Some(parent) => {
                            if !parent.children.contains(&node.id) {
                                push(node.id, Rule::ParentChildMismatch);
                            }
                        }
                    },
                }
                if node.genus.trim().is_empty() {
                    push(node.id, Rule::EmptyGenus);
                }
            }
            let mut distinct = BTreeSet::new();
            for (ordinal, child) in node.children.iter().enumerate() {
                if !distinct.insert(*child) {
                    push(node.id, Rule::DuplicateChild);
                }
                match self.nodes.get(child) {
                    None => push(node.id, Rule::UnknownChild),
                    Some(c) => {
                        if c.parent != Some(node.id) {
                            push(*child, Rule::ParentChildMismatch);
                        }
                        // Descriptors are fixed at creation, so only nodes that had
                        // siblings when created are bound by the differentia rule.
                        if ordinal > 0 && c.differentia.trim().is_empty() {
                            push(*child, Rule::EmptyDifferentia);
                        }
                    }
                }
            }
            for m in &node.members {
                if seen_members.insert(m, node.id).is_some() {
                    push(node.id, Rule::MemberAssignedTwice);
                }
            }
        }

        // Parent-pointer walks: a walk that revisits a node is a cycle.
        let mut in_cycle = BTreeSet::new();
        for &start in self.nodes.keys() {
            let mut walk = BTreeSet::new();
            let mut current = Some(start);
            while let Some(id) = current {
                if !walk.insert(id) {
                    in_cycle.insert(id);
                    break;
                }
                current = self.nodes.get(&id).and_then(|n| n.parent);
            }
        }
        for id in &in_cycle {
            push(*id, Rule::CycleDetected);
        }

        let reachable: BTreeSet<CategoryId> = self.subtree(self.root).into_iter().collect();
        for &id in self.nodes.keys() {
            if !reachable.contains(&id) && !in_cycle.contains(&id) {
                push(id, Rule::Unreachable);
            }
        }

        let mut labels: HashMap<LabelPath, CategoryId> = HashMap::new();
        for &id in &reachable {
            if let Ok(label) = self.path_label(id) {
                if labels.insert(label, id).is_some() {
                    push(id, Rule::DuplicatePathLabel);
                }
            }
        }

        out.into_iter().collect()
    }

    /// Canonical JSON: keys sorted, nodes in id order, two-space indent, LF.
    pub fn to_canonical_json(&self) -> String {
        let file = HierarchyFile::from(self);
        let mut out = serde_json::to_string_pretty(&file).expect("hierarchy serializes");
        out.push('\n');
        out
    }

    /// Parses a hierarchy file without enforcing the tree invariants, so that
    /// corrupt files can still be inspected with [`Hierarchy::validate`].
    pub fn from_json_unchecked(text: &str) -> Result<Hierarchy, HierarchyError> {
        let file: HierarchyFile =
            serde_json::from_str(text).map_err(|e| HierarchyError::Format(e.to_string()))?;
        Hierarchy::try_from(file)
    }

    pub fn from_json(text: &str) -> Result<Hierarchy, HierarchyError> {
        let h = Hierarchy::from_json_unchecked(text)?;
        let violations = h.validate();
        if violations.is_empty() {
            Ok(h)
        } else {
            Err(HierarchyError::Invalid(violations))
        }
    }

    pub fn to_file(&self) -> HierarchyFile {
        HierarchyFile::from(self)
    }
}

/// On-disk form of a hierarchy. Field order is alphabetical so that serde's
/// declaration-order output is the sorted-key canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyFile {
    pub nodes: Vec<NodeRecord>,
    pub root: CategoryId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub children: Vec<CategoryId>,
    pub differentia: String,
    pub genus: String,
    pub id: CategoryId,
    pub members: Vec<ObjectId>,
    pub name: Option<String>,
    pub parent: Option<CategoryId>,
}

impl From<&Hierarchy> for HierarchyFile {
    fn from(h: &Hierarchy) -> Self {
        HierarchyFile {
            nodes: h
                .nodes
                .values()
                .map(|c| NodeRecord {
                    children: c.children.clone(),
                    differentia: c.differentia.clone(),
                    genus: c.genus.clone(),
                    id: c.id,
                    members: c.members.clone(),
                    name: c.name.clone(),
                    parent: c.parent,
                })
                .collect(),
            root: h.root,
        }
    }
}

impl TryFrom<HierarchyFile> for Hierarchy {
    type Error = HierarchyError;

    fn try_from(file: HierarchyFile) -> Result<Self, Self::Error> {
        let mut nodes = BTreeMap::new();
        let mut assignments = HashMap::new();
        for n in file.nodes {
            for m in &n.members {
                assignments.entry(m.clone()).or_insert(n.id);
            }
            let id = n.id;
            let previous = nodes.insert(
                id,
                Category {
                    id,
                    parent: n.parent,
                    name: n.name,
                    genus: n.genus,
                    differentia: n.differentia,
                    members: n.members,
                    children: n.children,
                },
            );
            if previous.is_some() {
                return Err(HierarchyError::Format(format!("duplicate node id {}", id.0)));
            }
        }
        let next_id = nodes
            .keys()
            .map(|k| k.0 + 1)
            .max()
            .unwrap_or(0)
            .max(file.root.0 + 1);
        Ok(Hierarchy {
            nodes,
            root: file.root,
            next_id,
            assignments,
        })
    }
}

impl Serialize for Hierarchy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        HierarchyFile::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Hierarchy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = HierarchyFile::deserialize(deserializer)?;
        Hierarchy::try_from(file).map_err(serde::de::Error::custom)
    }
}
