//! Label taxonomies and ID/OOD holdout splits.
//!
//! A [`LabelHierarchy`] is a rooted tree of label nodes whose leaves are the
//! finest-grained classes. Holding a node out at depth `k` makes every leaf
//! below it an OOD sample of level `Lk`; all remaining leaves form the
//! in-distribution class set. [`compile_split`] derives that partition and
//! [`emit_manifest`] freezes it into a [`SplitManifest`] with dense class
//! indices.
//!
//! Two equivalent input formats are accepted by [`parse_hierarchy`]:
//!
//! ```text
//! # comments start with '#'
//! @hierarchy ships-rs
//! ships: ShipsRSImageNet
//!   military: Military
//!     military/submarine: Submarine
//! ```
//!
//! where indentation (two spaces per level) gives the depth, and a JSON object
//! `{"id": "...", "nodes": [{"id": "...", "parent": null, "name": "..."}]}`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const INDENT: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HierarchyError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("invalid hierarchy object: {0}")]
    Object(String),
    #[error("duplicate node id '{0}'")]
    DuplicateId(String),
    #[error("node '{node}' names missing parent '{parent}'")]
    MissingParent { node: String, parent: String },
    #[error("cycle through node '{0}'")]
    Cycle(String),
    #[error("hierarchy has no root node")]
    NoRoot,
    #[error("multiple roots: '{0}' and '{1}'")]
    MultipleRoots(String, String),
    #[error("root '{0}' has no children")]
    Empty(String),
    #[error("leaf '{node}' sits at depth {depth}, expected {expected}")]
    RaggedLeaf {
        node: String,
        depth: usize,
        expected: usize,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("node '{node}' is at depth {depth} but was held out at {declared}")]
    LevelMismatch {
        node: String,
        declared: HoldoutLevel,
        depth: usize,
    },
    #[error("held-out node '{descendant}' lies under held-out node '{ancestor}'")]
    NestedHoldout { ancestor: String, descendant: String },
    #[error("node '{0}' is held out twice")]
    DuplicateHoldout(String),
    #[error("holdouts leave no in-distribution classes")]
    EmptyInDistribution,
    #[error("invalid holdout '{0}', expected NODE=L1|L2|L3")]
    BadHoldoutSyntax(String),
}

/// Depth at which a class was removed from training; `L1` is the coarsest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HoldoutLevel {
    L1,
    L2,
    L3,
}

impl HoldoutLevel {
    pub const ALL: [HoldoutLevel; 3] = [HoldoutLevel::L1, HoldoutLevel::L2, HoldoutLevel::L3];

    pub fn depth(self) -> usize {
        match self {
            HoldoutLevel::L1 => 1,
            HoldoutLevel::L2 => 2,
            HoldoutLevel::L3 => 3,
        }
    }

    pub fn from_depth(depth: usize) -> Option<Self> {
        match depth {
            1 => Some(HoldoutLevel::L1),
            2 => Some(HoldoutLevel::L2),
            3 => Some(HoldoutLevel::L3),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HoldoutLevel::L1 => "L1",
            HoldoutLevel::L2 => "L2",
            HoldoutLevel::L3 => "L3",
        }
    }
}

impl fmt::Display for HoldoutLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HoldoutLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L1" | "l1" | "1" => Ok(HoldoutLevel::L1),
            "L2" | "l2" | "2" => Ok(HoldoutLevel::L2),
            "L3" | "l3" | "3" => Ok(HoldoutLevel::L3),
            other => Err(format!("unknown holdout level '{other}'")),
        }
    }
}

/// One node as written in a hierarchy file, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub parent: Option<String>,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyObject {
    id: String,
    nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub parent: Option<usize>,
    pub name: String,
    pub depth: usize,
    pub children: Vec<usize>,
}

/// Validated label tree. Nodes keep their input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHierarchy {
    id: String,
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    root: usize,
    leaf_depth: usize,
}

impl LabelHierarchy {
    /// Validate a flat node list into a tree.
    pub fn from_nodes(id: impl Into<String>, specs: Vec<NodeSpec>) -> Result<Self, HierarchyError> {
        let mut index = HashMap::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(HierarchyError::DuplicateId(s.id.clone()));
            }
        }
        let mut parents = Vec::with_capacity(specs.len());
        for s in &specs {
            let parent = match &s.parent {
                None => None,
                Some(p) => Some(*index.get(p).ok_or_else(|| HierarchyError::MissingParent {
                    node: s.id.clone(),
                    parent: p.clone(),
                })?),
            };
            parents.push(parent);
        }

        // Every chain of parents must terminate within n steps.
        let n = specs.len();
        for (start, s) in specs.iter().enumerate() {
            let mut cur = parents[start];
            let mut steps = 0;
            while let Some(p) = cur {
                if p == start || steps > n {
                    return Err(HierarchyError::Cycle(s.id.clone()));
                }
                cur = parents[p];
                steps += 1;
            }
        }

        let mut root = None;
        for (i, p) in parents.iter().enumerate() {
            if p.is_none() {
                if let Some(r) = root {
                    let first: &NodeSpec = &specs[r];
                    return Err(HierarchyError::MultipleRoots(first.id.clone(), specs[i].id.clone()));
                }
                root = Some(i);
            }
        }
        let root = root.ok_or(HierarchyError::NoRoot)?;

        let mut nodes: Vec<Node> = specs
            .into_iter()
            .zip(&parents)
            .map(|(s, &parent)| Node {
                id: s.id,
                parent,
                name: s.name,
                depth: 0,
                children: Vec::new(),
            })
            .collect();
        for i in 0..n {
            if let Some(p) = parents[i] {
                nodes[p].children.push(i);
            }
        }
        if nodes[root].children.is_empty() {
            return Err(HierarchyError::Empty(nodes[root].id.clone()));
        }
        // breadth-first depth assignment
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            let d = nodes[i].depth;
            for c in nodes[i].children.clone() {
                nodes[c].depth = d + 1;
                queue.push_back(c);
            }
        }

        let mut leaf_depth = None;
        for node in nodes.iter().filter(|n| n.children.is_empty()) {
            match leaf_depth {
                None => leaf_depth = Some(node.depth),
                Some(expected) if expected != node.depth => {
                    return Err(HierarchyError::RaggedLeaf {
                        node: node.id.clone(),
                        depth: node.depth,
                        expected,
                    })
                }
                _ => {}
            }
        }

        Ok(LabelHierarchy {
            id: id.into(),
            nodes,
            index,
            root,
            leaf_depth: leaf_depth.unwrap_or(0),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[self.root]
    }

    pub fn get(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    /// Depth shared by every leaf.
    pub fn leaf_depth(&self) -> usize {
        self.leaf_depth
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.children.is_empty())
    }

    pub fn nodes_at_depth(&self, depth: usize) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.depth == depth)
    }

    /// Number of nodes per depth, starting with depth 1.
    pub fn level_counts(&self) -> Vec<usize> {
        (1..=self.leaf_depth).map(|d| self.nodes_at_depth(d).count()).collect()
    }

    pub fn is_ancestor(&self, ancestor: &str, node: &str) -> bool {
        let (Some(&a), Some(&n)) = (self.index.get(ancestor), self.index.get(node)) else {
            return false;
        };
        let mut cur = self.nodes[n].parent;
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.nodes[p].parent;
        }
        false
    }

    /// Ids of the leaves under `id` (the node itself if it is a leaf).
    pub fn leaves_under(&self, id: &str) -> Vec<&str> {
        let Some(&start) = self.index.get(id) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.children.is_empty() {
                out.push(node.id.as_str());
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    /// Render in the indented text format; parses back to an equal tree.
    pub fn to_text(&self) -> String {
        let mut out = format!("@hierarchy {}\n", self.id);
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            out.push_str(&" ".repeat(node.depth * INDENT));
            out.push_str(&node.id);
            if node.name != node.id {
                out.push_str(": ");
                out.push_str(&node.name);
            }
            out.push('\n');
            stack.extend(node.children.iter().rev());
        }
        out
    }

    pub fn to_json(&self) -> String {
        let obj = HierarchyObject {
            id: self.id.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    id: n.id.clone(),
                    parent: n.parent.map(|p| self.nodes[p].id.clone()),
                    name: n.name.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&obj).expect("hierarchy serializes");
        s.push('\n');
        s
    }
}

/// Parse either the indented text format or the JSON object format.
pub fn parse_hierarchy(spec_text: &str) -> Result<LabelHierarchy, HierarchyError> {
    if spec_text.trim_start().starts_with('{') {
        let obj: HierarchyObject =
            serde_json::from_str(spec_text).map_err(|e| HierarchyError::Object(e.to_string()))?;
        return LabelHierarchy::from_nodes(obj.id, obj.nodes);
    }
    parse_text(spec_text)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '/' | '+'))
}

fn parse_text(text: &str) -> Result<LabelHierarchy, HierarchyError> {
    let mut hierarchy_id = None;
    let mut specs: Vec<NodeSpec> = Vec::new();
    // ids of the most recent node at each depth
    let mut open: Vec<String> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let syntax = |reason: String| HierarchyError::Syntax { line: line_no, reason };
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim_end();
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.trim_start().strip_prefix('@') {
            let mut parts = rest.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("hierarchy"), Some(id), None) if hierarchy_id.is_none() && specs.is_empty() => {
                    hierarchy_id = Some(id.to_string());
                    continue;
                }
                _ => return Err(syntax(format!("bad directive '{}'", line.trim()))),
            }
        }
        if line.starts_with('\t') || line.trim_start_matches(' ').starts_with('\t') {
            return Err(syntax("tabs are not allowed in indentation".into()));
        }
        let indent = line.len() - line.trim_start_matches(' ').len();
        if indent % INDENT != 0 {
            return Err(syntax(format!("indentation of {indent} is not a multiple of {INDENT}")));
        }
        let depth = indent / INDENT;
        if depth > open.len() {
            return Err(syntax(format!("depth {depth} skips a level")));
        }
        let body = line.trim();
        let (id, name) = match body.split_once(':') {
            Some((id, name)) => (id.trim(), name.trim()),
            None => (body, body),
        };
        if !valid_id(id) {
            return Err(syntax(format!("invalid node id '{id}'")));
        }
        let name = if name.is_empty() { id } else { name };
        open.truncate(depth);
        let parent = if depth == 0 {
            if !specs.is_empty() {
                return Err(HierarchyError::MultipleRoots(specs[0].id.clone(), id.to_string()));
            }
            None
        } else {
            Some(open[depth - 1].clone())
        };
        specs.push(NodeSpec {
            id: id.to_string(),
            parent,
            name: name.to_string(),
        });
        open.push(id.to_string());
    }
    let id = match hierarchy_id {
        Some(id) => id,
        None => specs.first().map(|s| s.id.clone()).ok_or(HierarchyError::NoRoot)?,
    };
    LabelHierarchy::from_nodes(id, specs)
}

/// One `(node, level)` holdout declaration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Holdout {
    pub node: String,
    pub level: HoldoutLevel,
}

impl Holdout {
    pub fn new(node: impl Into<String>, level: HoldoutLevel) -> Self {
        Holdout { node: node.into(), level }
    }
}

impl FromStr for Holdout {
    type Err = SplitError;

    /// Parses `NODE=LEVEL`, e.g. `airbus/a340=L2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (node, level) = s
            .rsplit_once('=')
            .ok_or_else(|| SplitError::BadHoldoutSyntax(s.to_string()))?;
        let level = level
            .parse()
            .map_err(|_| SplitError::BadHoldoutSyntax(s.to_string()))?;
        if node.trim().is_empty() {
            return Err(SplitError::BadHoldoutSyntax(s.to_string()));
        }
        Ok(Holdout::new(node.trim(), level))
    }
}

/// Compiled leaf partition for one set of holdouts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub hierarchy_id: String,
    pub holdouts: Vec<Holdout>,
    pub id_leaves: BTreeSet<String>,
    pub ood_leaves: BTreeMap<HoldoutLevel, BTreeSet<String>>,
}

impl SplitPlan {
    pub fn total_leaves(&self) -> usize {
        self.id_leaves.len() + self.ood_leaves.values().map(BTreeSet::len).sum::<usize>()
    }

    /// Level of a leaf, `None` for in-distribution leaves.
    pub fn level_of(&self, leaf: &str) -> Option<HoldoutLevel> {
        self.ood_leaves
            .iter()
            .find(|(_, set)| set.contains(leaf))
            .map(|(level, _)| *level)
    }
}

pub fn compile_split(h: &LabelHierarchy, holdouts: &[Holdout]) -> Result<SplitPlan, SplitError> {
    let mut seen = BTreeSet::new();
    for ho in holdouts {
        let node = h.get(&ho.node).ok_or_else(|| SplitError::UnknownNode(ho.node.clone()))?;
        if node.depth != ho.level.depth() {
            return Err(SplitError::LevelMismatch {
                node: ho.node.clone(),
                declared: ho.level,
                depth: node.depth,
            });
        }
        if !seen.insert(ho.node.as_str()) {
            return Err(SplitError::DuplicateHoldout(ho.node.clone()));
        }
    }
    for a in holdouts {
        for d in holdouts {
            if h.is_ancestor(&a.node, &d.node) {
                return Err(SplitError::NestedHoldout {
                    ancestor: a.node.clone(),
                    descendant: d.node.clone(),
                });
            }
        }
    }

    let mut ood_leaves: BTreeMap<HoldoutLevel, BTreeSet<String>> = BTreeMap::new();
    let mut held = BTreeSet::new();
    for ho in holdouts {
        let set = ood_leaves.entry(ho.level).or_default();
        for leaf in h.leaves_under(&ho.node) {
            set.insert(leaf.to_string());
            held.insert(leaf);
        }
    }
    let id_leaves: BTreeSet<String> = h
        .leaves()
        .filter(|n| !held.contains(n.id.as_str()))
        .map(|n| n.id.clone())
        .collect();
    if id_leaves.is_empty() {
        return Err(SplitError::EmptyInDistribution);
    }
    let mut holdouts = holdouts.to_vec();
    holdouts.sort();
    Ok(SplitPlan {
        hierarchy_id: h.id().to_string(),
        holdouts,
        id_leaves,
        ood_leaves,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub hierarchy_id: String,
    pub rule_hash: String,
}

/// Frozen split: `id_classes[i]` is the leaf trained as class `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub id_classes: Vec<String>,
    pub ood_sets: BTreeMap<HoldoutLevel, Vec<String>>,
    pub provenance: Provenance,
}

impl SplitManifest {
    pub fn num_classes(&self) -> usize {
        self.id_classes.len()
    }

    pub fn class_index(&self, leaf: &str) -> Option<usize> {
        self.id_classes.binary_search_by(|c| c.as_str().cmp(leaf)).ok()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// SHA-256 over the sorted `node=level` lines of a holdout set.
pub fn rule_hash(holdouts: &[Holdout]) -> String {
    let mut lines: Vec<String> = holdouts.iter().map(|h| format!("{}={}", h.node, h.level)).collect();
    lines.sort();
    let mut hasher = Sha256::new();
    for l in &lines {
        hasher.update(l.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

pub fn emit_manifest(plan: &SplitPlan) -> SplitManifest {
    SplitManifest {
        // BTreeSet iteration is already lexicographic.
        id_classes: plan.id_leaves.iter().cloned().collect(),
        ood_sets: plan
            .ood_leaves
            .iter()
            .map(|(level, set)| (*level, set.iter().cloned().collect()))
            .collect(),
        provenance: Provenance {
            hierarchy_id: plan.hierarchy_id.clone(),
            rule_hash: rule_hash(&plan.holdouts),
        },
    }
}

/// Hierarchies and splits shipped with the crate.
pub mod bundled {
    use super::*;

    pub const FGVC_AIRCRAFT: &str = include_str!("../data/fgvc_aircraft.hier");
    pub const SHIPS_RS: &str = include_str!("../data/ships_rs.hier");

    pub fn fgvc_aircraft() -> LabelHierarchy {
        parse_hierarchy(FGVC_AIRCRAFT).expect("bundled FGVC hierarchy is valid")
    }

    pub fn ships_rs() -> LabelHierarchy {
        parse_hierarchy(SHIPS_RS).expect("bundled Ships hierarchy is valid")
    }

    /// FGVC-Aircraft split 1: de Havilland, the A340 family and the 737-400.
    pub fn fgvc_split1() -> Vec<Holdout> {
        vec![
            Holdout::new("de-havilland", HoldoutLevel::L1),
            Holdout::new("airbus/a340", HoldoutLevel::L2),
            Holdout::new("boeing/boeing-737/737-400", HoldoutLevel::L3),
        ]
    }

    /// Civilian and other ships held out by use, the military catch-all by class.
    pub fn ships_military() -> Vec<Holdout> {
        vec![
            Holdout::new("civilian", HoldoutLevel::L1),
            Holdout::new("other-ship", HoldoutLevel::L1),
            Holdout::new("military/other-military", HoldoutLevel::L2),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str, parent: Option<&str>) -> NodeSpec {
        NodeSpec {
            id: id.into(),
            parent: parent.map(Into::into),
            name: id.into(),
        }
    }

    #[test]
    fn minimal_tree_is_one_level() {
        let h = parse_hierarchy("root\n  only\n").unwrap();
        assert_eq!(h.leaf_depth(), 1);
        assert_eq!(h.level_counts(), vec![1]);
        assert_eq!(h.id(), "root");
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let nodes = vec![spec("root", None), spec("a", Some("root")), spec("b", Some("b"))];
        assert_eq!(
            LabelHierarchy::from_nodes("x", nodes),
            Err(HierarchyError::Cycle("b".into()))
        );
        let json = r#"{"id":"x","nodes":[{"id":"a","parent":"a","name":"A"}]}"#;
        assert_eq!(parse_hierarchy(json), Err(HierarchyError::Cycle("a".into())));
    }

    #[test]
    fn longer_cycle_detected() {
        let nodes = vec![
            spec("root", None),
            spec("leaf", Some("root")),
            spec("a", Some("b")),
            spec("b", Some("a")),
        ];
        assert!(matches!(
            LabelHierarchy::from_nodes("x", nodes),
            Err(HierarchyError::Cycle(_))
        ));
    }

    #[test]
    fn parse_errors_name_the_node() {
        assert_eq!(
            parse_hierarchy("r\n  a\n  a\n"),
            Err(HierarchyError::DuplicateId("a".into()))
        );
        let json = r#"{"id":"x","nodes":[{"id":"r","parent":null,"name":"R"},{"id":"a","parent":"zz","name":"A"}]}"#;
        assert_eq!(
            parse_hierarchy(json),
            Err(HierarchyError::MissingParent {
                node: "a".into(),
                parent: "zz".into()
            })
        );
        assert_eq!(
            parse_hierarchy("r\n  a\n    a1\n  b\n"),
            Err(HierarchyError::RaggedLeaf {
                node: "b".into(),
                depth: 1,
                expected: 2
            })
        );
    }

    #[test]
    fn text_syntax_errors() {
        assert!(matches!(
            parse_hierarchy("r\n   a\n"),
            Err(HierarchyError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_hierarchy("r\n    a\n"),
            Err(HierarchyError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_hierarchy("r\n  a b\n"),
            Err(HierarchyError::Syntax { line: 2, .. })
        ));
        assert_eq!(
            parse_hierarchy("r\n  a\ns\n"),
            Err(HierarchyError::MultipleRoots("r".into(), "s".into()))
        );
        assert_eq!(parse_hierarchy("r\n"), Err(HierarchyError::Empty("r".into())));
        assert_eq!(parse_hierarchy("# nothing\n"), Err(HierarchyError::NoRoot));
    }

    #[test]
    fn comments_and_display_names() {
        let h = parse_hierarchy("@hierarchy demo\n# top\nr: Root  # trailing\n  a: Alpha\n").unwrap();
        assert_eq!(h.id(), "demo");
        assert_eq!(h.get("a").unwrap().name, "Alpha");
        assert_eq!(h.get("r").unwrap().name, "Root");
    }

    #[test]
    fn text_and_json_round_trip() {
        let h = bundled::ships_rs();
        assert_eq!(parse_hierarchy(&h.to_text()).unwrap(), h);
        assert_eq!(parse_hierarchy(&h.to_json()).unwrap(), h);
    }

    #[test]
    fn ships_shape() {
        let h = bundled::ships_rs();
        assert_eq!(h.leaf_depth(), 2);
        let uses: Vec<_> = h.nodes_at_depth(1).map(|n| n.name.as_str()).collect();
        assert_eq!(uses, ["Military", "Civilian", "Other Ship"]);
    }

    #[test]
    fn empty_holdouts_keep_everything() {
        let h = bundled::ships_rs();
        let plan = compile_split(&h, &[]).unwrap();
        assert_eq!(plan.id_leaves.len(), h.leaves().count());
        assert!(plan.ood_leaves.is_empty());
    }

    #[test]
    fn fgvc_split1_levels() {
        let h = bundled::fgvc_aircraft();
        let plan = compile_split(&h, &bundled::fgvc_split1()).unwrap();
        let l1 = &plan.ood_leaves[&HoldoutLevel::L1];
        assert!(l1.contains("de-havilland/dh-82/dh-82"));
        assert!(l1.contains("de-havilland/dhc-1/dhc-1"));
        assert_eq!(l1.len(), 5);
        let l2 = &plan.ood_leaves[&HoldoutLevel::L2];
        assert_eq!(l2.len(), 4);
        assert!(l2.iter().all(|l| l.starts_with("airbus/a340/")));
        let l3: Vec<_> = plan.ood_leaves[&HoldoutLevel::L3].iter().collect();
        assert_eq!(l3, ["boeing/boeing-737/737-400"]);
        assert_eq!(plan.id_leaves.len(), 100 - 10);
    }

    #[test]
    fn ships_split_keeps_named_military() {
        let h = bundled::ships_rs();
        let plan = compile_split(&h, &bundled::ships_military()).unwrap();
        assert!(plan.id_leaves.iter().all(|l| l.starts_with("military/")));
        assert!(!plan.id_leaves.contains("military/other-military"));
        assert_eq!(plan.id_leaves.len(), 9);
        assert!(!plan.ood_leaves.contains_key(&HoldoutLevel::L3));
    }

    #[test]
    fn split_errors() {
        let h = bundled::ships_rs();
        assert_eq!(
            compile_split(&h, &[Holdout::new("nope", HoldoutLevel::L1)]),
            Err(SplitError::UnknownNode("nope".into()))
        );
        assert!(matches!(
            compile_split(&h, &[Holdout::new("military", HoldoutLevel::L2)]),
            Err(SplitError::LevelMismatch { depth: 1, .. })
        ));
        assert!(matches!(
            compile_split(
                &h,
                &[
                    Holdout::new("military", HoldoutLevel::L1),
                    Holdout::new("military/submarine", HoldoutLevel::L2)
                ]
            ),
            Err(SplitError::NestedHoldout { .. })
        ));
        let all: Vec<_> = ["military", "civilian", "other-ship"]
            .iter()
            .map(|n| Holdout::new(*n, HoldoutLevel::L1))
            .collect();
        assert_eq!(compile_split(&h, &all), Err(SplitError::EmptyInDistribution));
        assert_eq!(
            compile_split(
                &h,
                &[Holdout::new("civilian", HoldoutLevel::L1), Holdout::new("civilian", HoldoutLevel::L1)]
            ),
            Err(SplitError::DuplicateHoldout("civilian".into()))
        );
    }

    #[test]
    fn holdout_syntax() {
        let h: Holdout = "airbus/a340=L2".parse().unwrap();
        assert_eq!(h, Holdout::new("airbus/a340", HoldoutLevel::L2));
        assert!("airbus".parse::<Holdout>().is_err());
        assert!("x=L4".parse::<Holdout>().is_err());
    }

    #[test]
    fn manifest_ordering_is_lexicographic() {
        let h = parse_hierarchy("r\n  b\n  a\n  c\n").unwrap();
        let m = emit_manifest(&compile_split(&h, &[]).unwrap());
        assert_eq!(m.id_classes, ["a", "b", "c"]);
        assert_eq!(m.class_index("c"), Some(2));
    }

    #[test]
    fn manifest_round_trip_is_byte_identical() {
        let h = bundled::fgvc_aircraft();
        let m = emit_manifest(&compile_split(&h, &bundled::fgvc_split1()).unwrap());
        let text = m.to_json();
        let back = SplitManifest::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert!(text.contains("\"L3\""));
    }

    #[test]
    fn rule_hash_ignores_order() {
        let mut a = bundled::fgvc_split1();
        let h1 = rule_hash(&a);
        a.reverse();
        assert_eq!(rule_hash(&a), h1);
        assert_ne!(rule_hash(&a[..2]), h1);
    }
}
