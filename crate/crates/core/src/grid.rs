//! Rooted-tree model of a low-voltage distribution network.
//!
//! Nodes are poles (hidden) or customers (leaves); the transformer is the
//! root. Every line segment is identified by its child endpoint, since each
//! non-root node has exactly one parent in a radial network.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Segment resistance used by every bundled fixture, in ohms.
pub const DEFAULT_SEGMENT_RESISTANCE: f64 = 9e-3;
/// Source voltage magnitude used by every bundled fixture, in volts.
pub const DEFAULT_NOMINAL_VOLTAGE: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Root,
    Hidden,
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub parent: NodeId,
    pub child: NodeId,
    #[serde(rename = "resistance_ohm")]
    pub resistance: f64,
    #[serde(rename = "reactance_ohm", default)]
    pub reactance: f64,
}

impl LineSegment {
    pub fn resistive(parent: NodeId, child: NodeId, resistance: f64) -> Self {
        Self {
            parent,
            child,
            resistance,
            reactance: 0.0,
        }
    }
}

/// A radial network. Plain data: construct freely, then call
/// [`GridTopology::validate`] or [`GridTopology::index`] before relying on
/// tree structure.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    pub nodes: BTreeMap<NodeId, NodeKind>,
    pub segments: Vec<LineSegment>,
    pub nominal_voltage: f64,
}

/// One broken structural rule, naming the offending ids.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    CycleDetected {
        nodes: Vec<NodeId>,
    },
    Disconnected {
        nodes: Vec<NodeId>,
    },
    MultipleRoots {
        roots: Vec<NodeId>,
    },
    MissingRoot,
    LeafWithChildren {
        node: NodeId,
        children: Vec<NodeId>,
    },
    HiddenWithoutChildren {
        node: NodeId,
    },
    RootHasParent {
        root: NodeId,
        parent: NodeId,
    },
    MultipleParents {
        node: NodeId,
        parents: Vec<NodeId>,
    },
    UnknownNode {
        segment: usize,
        node: NodeId,
    },
    SelfLoop {
        segment: usize,
        node: NodeId,
    },
    SegmentCount {
        nodes: usize,
        segments: usize,
    },
    BadImpedance {
        segment: usize,
        resistance: f64,
        reactance: f64,
    },
    BadNominalVoltage(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn ids(v: &[NodeId]) -> String {
            v.iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        }
        match self {
            Violation::CycleDetected { nodes } => write!(f, "cycle through nodes {}", ids(nodes)),
            Violation::Disconnected { nodes } => {
                write!(f, "nodes {} are not reachable from the root", ids(nodes))
            }
            Violation::MultipleRoots { roots } => write!(f, "multiple roots: {}", ids(roots)),
            Violation::MissingRoot => write!(f, "no root node"),
            Violation::LeafWithChildren { node, children } => {
                write!(f, "leaf {node} has children {}", ids(children))
            }
            Violation::HiddenWithoutChildren { node } => {
                write!(f, "hidden node {node} has no children")
            }
            Violation::RootHasParent { root, parent } => {
                write!(f, "root {root} has parent {parent}")
            }
            Violation::MultipleParents { node, parents } => {
                write!(f, "node {node} has several parents: {}", ids(parents))
            }
            Violation::UnknownNode { segment, node } => {
                write!(f, "segment #{segment} references unknown node {node}")
            }
            Violation::SelfLoop { segment, node } => {
                write!(f, "segment #{segment} connects node {node} to itself")
            }
            Violation::SegmentCount { nodes, segments } => {
                write!(
                    f,
                    "{segments} segments for {nodes} nodes, expected {}",
                    nodes.saturating_sub(1)
                )
            }
            Violation::BadImpedance {
                segment,
                resistance,
                reactance,
            } => write!(
                f,
                "segment #{segment} has invalid impedance r={resistance} x={reactance}"
            ),
            Violation::BadNominalVoltage(v) => write!(f, "nominal voltage {v} is not positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid topology: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn contains(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("unknown fixture `{0}` (expected one of sys6, sys11, sys15, sys20, sys25)")]
    UnknownFixture(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error(transparent)]
    Invalid(#[from] ValidationReport),
}

impl GridTopology {
    /// Builds a purely resistive tree from `(child, parent)` pairs. Kinds are
    /// inferred: the node without a parent is the root, childless nodes are
    /// leaves, everything else is hidden.
    pub fn from_parent_map(
        parents: &BTreeMap<NodeId, NodeId>,
        resistance: f64,
        nominal_voltage: f64,
    ) -> Self {
        let mut all: BTreeSet<NodeId> = parents.keys().copied().collect();
        all.extend(parents.values().copied());
        let with_children: BTreeSet<NodeId> = parents.values().copied().collect();
        let nodes = all
            .into_iter()
            .map(|n| {
                let kind = if !parents.contains_key(&n) {
                    NodeKind::Root
                } else if with_children.contains(&n) {
                    NodeKind::Hidden
                } else {
                    NodeKind::Leaf
                };
                (n, kind)
            })
            .collect();
        let segments = parents
            .iter()
            .map(|(&c, &p)| LineSegment::resistive(p, c, resistance))
            .collect();
        Self {
            nodes,
            segments,
            nominal_voltage,
        }
    }

    /// A single root node with no segments.
    pub fn single(id: NodeId, nominal_voltage: f64) -> Self {
        Self {
            nodes: BTreeMap::from([(id, NodeKind::Root)]),
            segments: Vec::new(),
            nominal_voltage,
        }
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes_of(NodeKind::Leaf)
    }

    pub fn hidden(&self) -> Vec<NodeId> {
        self.nodes_of(NodeKind::Hidden)
    }

    fn nodes_of(&self, kind: NodeKind) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, &k)| k == kind)
            .map(|(&n, _)| n)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ValidationReport> {
        let mut violations = Vec::new();

        if !(self.nominal_voltage > 0.0 && self.nominal_voltage.is_finite()) {
            violations.push(Violation::BadNominalVoltage(self.nominal_voltage));
        }

        let roots = self.nodes_of(NodeKind::Root);
        match roots.len() {
            0 => violations.push(Violation::MissingRoot),
            1 => {}
            _ => violations.push(Violation::MultipleRoots {
                roots: roots.clone(),
            }),
        }

        if self.segments.len() + 1 != self.nodes.len() {
            violations.push(Violation::SegmentCount {
                nodes: self.nodes.len(),
                segments: self.segments.len(),
            });
        }

        let mut parents: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (i, s) in self.segments.iter().enumerate() {
            let mut known = true;
            for n in [s.parent, s.child] {
                if !self.nodes.contains_key(&n) {
                    violations.push(Violation::UnknownNode {
                        segment: i,
                        node: n,
                    });
                    known = false;
                }
            }
            if s.parent == s.child {
                violations.push(Violation::SelfLoop {
                    segment: i,
                    node: s.parent,
                });
                known = false;
            }
            if !(s.resistance > 0.0 && s.resistance.is_finite())
                || !(s.reactance >= 0.0 && s.reactance.is_finite())
            {
                violations.push(Violation::BadImpedance {
                    segment: i,
                    resistance: s.resistance,
                    reactance: s.reactance,
                });
            }
            if known {
                parents.entry(s.child).or_default().push(s.parent);
                children.entry(s.parent).or_default().push(s.child);
            }
        }

        for (&node, ps) in &parents {
            if ps.len() > 1 {
                violations.push(Violation::MultipleParents {
                    node,
                    parents: ps.clone(),
                });
            }
            if self.nodes.get(&node) == Some(&NodeKind::Root) {
                violations.push(Violation::RootHasParent {
                    root: node,
                    parent: ps[0],
                });
            }
        }

        for (&node, &kind) in &self.nodes {
            let kids = children.get(&node);
            match kind {
                NodeKind::Leaf => {
                    if let Some(kids) = kids {
                        violations.push(Violation::LeafWithChildren {
                            node,
                            children: kids.clone(),
                        });
                    }
                }
                NodeKind::Hidden if kids.is_none() => {
                    violations.push(Violation::HiddenWithoutChildren { node });
                }
                _ => {}
            }
        }

        if let Some(cycle) = find_cycle(&self.nodes, &children) {
            violations.push(Violation::CycleDetected { nodes: cycle });
        }

        if let [root] = roots[..] {
            let mut seen = BTreeSet::from([root]);
            let mut queue = VecDeque::from([root]);
            while let Some(n) = queue.pop_front() {
                for &c in children.get(&n).into_iter().flatten() {
                    if seen.insert(c) {
                        queue.push_back(c);
                    }
                }
            }
            let unreachable: Vec<NodeId> = self
                .nodes
                .keys()
                .filter(|n| !seen.contains(n))
                .copied()
                .collect();
            if !unreachable.is_empty() {
                violations.push(Violation::Disconnected { nodes: unreachable });
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(ValidationReport { violations })
        }
    }

    /// Validates and builds the array-based view used by the solvers.
    pub fn index(&self) -> Result<TreeIndex, ValidationReport> {
        self.validate()?;
        Ok(TreeIndex::build(self))
    }

    pub fn to_json(&self) -> String {
        let file = TopologyFile {
            nominal_voltage_v: self.nominal_voltage,
            nodes: self
                .nodes
                .iter()
                .map(|(&id, &kind)| NodeEntry { id, kind })
                .collect(),
            segments: self.segments.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("topology serializes");
        s.push('\n');
        s
    }

    /// Parses the topology file format. Schema-level checks only (ids unique,
    /// exactly one root, segments reference declared nodes); tree structure is
    /// left to [`GridTopology::validate`].
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let file: TopologyFile = serde_json::from_str(text).map_err(|e| GridError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;

        let mut nodes = BTreeMap::new();
        for entry in &file.nodes {
            if nodes.insert(entry.id, entry.kind).is_some() {
                return Err(GridError::SchemaViolation(format!(
                    "duplicate node id {}",
                    entry.id
                )));
            }
        }
        let roots = nodes.values().filter(|&&k| k == NodeKind::Root).count();
        if roots == 0 {
            return Err(GridError::SchemaViolation("no node has kind `root`".into()));
        }
        if roots > 1 {
            return Err(GridError::SchemaViolation(format!(
                "{roots} nodes have kind `root`"
            )));
        }
        for (i, s) in file.segments.iter().enumerate() {
            for n in [s.parent, s.child] {
                if !nodes.contains_key(&n) {
                    return Err(GridError::SchemaViolation(format!(
                        "segment #{i} references undeclared node {n}"
                    )));
                }
            }
        }
        Ok(Self {
            nodes,
            segments: file.segments,
            nominal_voltage: file.nominal_voltage_v,
        })
    }
}

fn find_cycle(
    nodes: &BTreeMap<NodeId, NodeKind>,
    children: &BTreeMap<NodeId, Vec<NodeId>>,
) -> Option<Vec<NodeId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Done,
    }
    let mut mark: BTreeMap<NodeId, Mark> = nodes.keys().map(|&n| (n, Mark::Fresh)).collect();
    for &start in nodes.keys() {
        if mark[&start] != Mark::Fresh {
            continue;
        }
        // iterative DFS keeping the active path
        let mut path: Vec<NodeId> = vec![start];
        let mut cursor: Vec<usize> = vec![0];
        mark.insert(start, Mark::Active);
        while let Some(&node) = path.last() {
            let kids = children.get(&node).map(Vec::as_slice).unwrap_or(&[]);
            let pos = cursor.last_mut().expect("cursor tracks path");
            if *pos < kids.len() {
                let next = kids[*pos];
                *pos += 1;
                match mark.get(&next).copied() {
                    Some(Mark::Fresh) => {
                        mark.insert(next, Mark::Active);
                        path.push(next);
                        cursor.push(0);
                    }
                    Some(Mark::Active) => {
                        let from = path
                            .iter()
                            .position(|&n| n == next)
                            .expect("active on path");
                        return Some(path[from..].to_vec());
                    }
                    _ => {}
                }
            } else {
                mark.insert(node, Mark::Done);
                path.pop();
                cursor.pop();
            }
        }
    }
    None
}

/// Array view of a validated tree. Positions are assigned in breadth-first
/// order from the root, so every parent precedes its children.
#[derive(Debug, Clone)]
pub struct TreeIndex {
    pub order: Vec<NodeId>,
    pub kinds: Vec<NodeKind>,
    /// Position of the parent, `None` for the root.
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Impedance of the segment feeding each position (zero for the root).
    pub resistance: Vec<f64>,
    pub reactance: Vec<f64>,
    pub nominal_voltage: f64,
    position: BTreeMap<NodeId, usize>,
}

impl TreeIndex {
    fn build(t: &GridTopology) -> Self {
        let root = t
            .nodes
            .iter()
            .find(|(_, &k)| k == NodeKind::Root)
            .map(|(&n, _)| n)
            .expect("validated tree has a root");
        let mut kids: BTreeMap<NodeId, Vec<&LineSegment>> = BTreeMap::new();
        for s in &t.segments {
            kids.entry(s.parent).or_default().push(s);
        }
        let mut order = vec![root];
        let mut parent = vec![None];
        let mut resistance = vec![0.0];
        let mut reactance = vec![0.0];
        let mut i = 0;
        while i < order.len() {
            for s in kids.get(&order[i]).into_iter().flatten() {
                order.push(s.child);
                parent.push(Some(i));
                resistance.push(s.resistance);
                reactance.push(s.reactance);
            }
            i += 1;
        }
        let mut children = vec![Vec::new(); order.len()];
        for (pos, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(pos);
            }
        }
        let position = order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let kinds = order.iter().map(|n| t.nodes[n]).collect();
        Self {
            order,
            kinds,
            parent,
            children,
            resistance,
            reactance,
            nominal_voltage: t.nominal_voltage,
            position,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.position.get(&id).copied()
    }

    /// Leaf ids below every position, in id order.
    pub fn leaf_sets(&self) -> Vec<BTreeSet<NodeId>> {
        let mut sets = vec![BTreeSet::new(); self.len()];
        for pos in (0..self.len()).rev() {
            if self.kinds[pos] == NodeKind::Leaf {
                sets[pos].insert(self.order[pos]);
            }
            if let Some(p) = self.parent[pos] {
                let below = sets[pos].clone();
                sets[p].extend(below);
            }
        }
        sets
    }

    /// Number of segments between the root and each position.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.len()];
        for pos in 1..self.len() {
            depth[pos] = depth[self.parent[pos].expect("non-root has parent")] + 1;
        }
        depth
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    nominal_voltage_v: f64,
    nodes: Vec<NodeEntry>,
    segments: Vec<LineSegment>,
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    id: NodeId,
    kind: NodeKind,
}
