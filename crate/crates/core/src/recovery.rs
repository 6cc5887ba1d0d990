//! Layered reconstruction of the hidden tree from leaf increments.
//!
//! Each layer works on a frontier of nodes whose voltage/current increments
//! are known (initially the metered leaves):
//!
//! 1. standard-scale the frontier's voltage increments, form the
//!    correlation and precision matrices and the distances `1 / |theta_ij|`;
//! 2. group the frontier ([`group_layer`]): nodes linked by distances at or
//!    below the threshold share a parent; if nothing is that close, only the
//!    closest pair does; every other node gets a single-child parent;
//! 3. push the increments up to every new parent ([`diffuse_parent`]) with
//!    the segment voltage drop and current summation.
//!
//! The loop ends when a single frontier node, the root, remains.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::grid::{
    GridTopology, LineSegment, NodeId, NodeKind, DEFAULT_NOMINAL_VOLTAGE,
    DEFAULT_SEGMENT_RESISTANCE,
};
use crate::signals::{standard_scale, MeasurementSet, SignalError};
use crate::stats::{self, Distance, DistanceMatrix, StatsError};

pub const DEFAULT_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryOptions {
    /// Resistance of every segment, in ohms.
    pub resistance: f64,
    /// Distance at or below which frontier nodes are grouped.
    pub threshold: f64,
    /// Ridge requested for every precision inversion.
    pub ridge: f64,
    /// Nominal voltage written into the recovered topology.
    pub nominal_voltage: f64,
    /// Keep the per-layer correlation, precision and distance matrices.
    pub keep_matrices: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            resistance: DEFAULT_SEGMENT_RESISTANCE,
            threshold: DEFAULT_THRESHOLD,
            ridge: 0.0,
            nominal_voltage: DEFAULT_NOMINAL_VOLTAGE,
            keep_matrices: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("empty frontier")]
    EmptyFrontier,
    #[error("a frontier of one node cannot be grouped")]
    SingletonFrontier,
    #[error("distance matrix covers {matrix} nodes but the frontier has {frontier}")]
    DistanceSize { matrix: usize, frontier: usize },
    #[error("diffusion needs at least one child")]
    NoChildren,
    #[error("series length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("recovery needs at least 2 leaves, got {0}")]
    TooFewLeaves(usize),
    #[error("segment resistance must be finite and positive, got {0}")]
    BadResistance(f64),
    #[error("threshold must be finite and non-negative, got {0}")]
    BadThreshold(f64),
    #[error("layer limit of {0} exceeded")]
    LayerLimitExceeded(usize),
    #[error(transparent)]
    Signals(#[from] SignalError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Synthetic id of a frontier node. Leaves reuse their meter id; inferred
/// parents are numbered upwards from the largest leaf id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrontierId(pub u32);

impl fmt::Display for FrontierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierNode {
    pub id: FrontierId,
    /// Raw voltage increments, volts.
    pub dv: Vec<f64>,
    /// Raw current increments of the segment feeding this node, amperes.
    pub di: Vec<f64>,
    pub leaf_set: BTreeSet<NodeId>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub children: Vec<FrontierId>,
    pub leaf_set: BTreeSet<NodeId>,
    /// Largest link needed to connect the group (single-linkage height);
    /// for a pair, simply their distance.
    pub distance: Distance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingStep {
    pub merges: Vec<Merge>,
    pub chain_promotions: Vec<FrontierId>,
}

/// Groups one frontier. `distances` must follow the frontier's order.
///
/// Threshold components come first; if there are none, the single closest
/// pair merges (ties broken by the smaller id pair); a two-node frontier
/// always merges. Every node left over is chain-promoted.
pub fn group_layer(
    frontier: &[FrontierNode],
    distances: &DistanceMatrix,
    threshold: f64,
) -> Result<GroupingStep, RecoveryError> {
    let k = frontier.len();
    match k {
        0 => return Err(RecoveryError::EmptyFrontier),
        1 => return Err(RecoveryError::SingletonFrontier),
        _ => {}
    }
    if distances.len() != k {
        return Err(RecoveryError::DistanceSize {
            matrix: distances.len(),
            frontier: k,
        });
    }
    let pair = |i: usize, j: usize| distances.get(i, j).expect("off-diagonal");
    let id_pair = |i: usize, j: usize| {
        let (a, b) = (frontier[i].id, frontier[j].id);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    };

    let mut groups: Vec<(Vec<usize>, Distance)> = Vec::new();
    if k == 2 {
        groups.push((vec![0, 1], pair(0, 1)));
    } else {
        // Kruskal over the sub-threshold links, tracking each component's
        // largest joining link.
        let mut edges: Vec<(Distance, (FrontierId, FrontierId), usize, usize)> = Vec::new();
        for i in 0..k {
            for j in (i + 1)..k {
                let d = pair(i, j);
                if matches!(d, Distance::Finite(x) if x <= threshold) {
                    edges.push((d, id_pair(i, j), i, j));
                }
            }
        }
        edges.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut uf = UnionFind::new(k);
        let mut height: Vec<Option<Distance>> = vec![None; k];
        for (d, _, i, j) in edges {
            let (ri, rj) = (uf.find(i), uf.find(j));
            if ri != rj {
                let root = uf.union(ri, rj);
                height[root] = Some(d);
            }
        }
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..k {
            members.entry(uf.find(i)).or_default().push(i);
        }
        for (root, m) in members {
            if m.len() >= 2 {
                groups.push((m, height[root].expect("joined component has a height")));
            }
        }
        if groups.is_empty() {
            let mut best: Option<(Distance, (FrontierId, FrontierId), usize, usize)> = None;
            for i in 0..k {
                for j in (i + 1)..k {
                    let cand = (pair(i, j), id_pair(i, j), i, j);
                    if best.as_ref().is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                        best = Some(cand);
                    }
                }
            }
            let (d, _, i, j) = best.expect("frontier has a pair");
            groups.push((vec![i, j], d));
        }
    }

    let mut merged = vec![false; k];
    let mut merges: Vec<Merge> = groups
        .into_iter()
        .map(|(members, distance)| {
            let mut children: Vec<FrontierId> = members.iter().map(|&i| frontier[i].id).collect();
            children.sort();
            let mut leaf_set = BTreeSet::new();
            for &i in &members {
                merged[i] = true;
                leaf_set.extend(frontier[i].leaf_set.iter().copied());
            }
            Merge {
                children,
                leaf_set,
                distance,
            }
        })
        .collect();
    merges.sort_by_key(|m| m.children[0]);
    let mut chain_promotions: Vec<FrontierId> = (0..k)
        .filter(|&i| !merged[i])
        .map(|i| frontier[i].id)
        .collect();
    chain_promotions.sort();
    Ok(GroupingStep {
        merges,
        chain_promotions,
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins two roots; the smaller index becomes the new root.
    fn union(&mut self, a: usize, b: usize) -> usize {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.parent[hi] = lo;
        lo
    }
}

/// Increments of the common parent of `children`: the voltage is the mean of
/// each child's voltage plus its segment drop `R * dI`, and the current is
/// the sum of the child currents (no injection at hidden poles).
pub fn diffuse_parent(
    children: &[&FrontierNode],
    resistance: f64,
    id: FrontierId,
) -> Result<FrontierNode, RecoveryError> {
    let first = children.first().ok_or(RecoveryError::NoChildren)?;
    let len = first.dv.len();
    for c in children {
        for got in [c.dv.len(), c.di.len()] {
            if got != len {
                return Err(RecoveryError::LengthMismatch { expected: len, got });
            }
        }
    }
    let n = children.len() as f64;
    let mut dv = vec![0.0; len];
    let mut di = vec![0.0; len];
    for c in children {
        for t in 0..len {
            dv[t] += c.dv[t] + resistance * c.di[t];
            di[t] += c.di[t];
        }
    }
    if children.len() > 1 {
        dv.iter_mut().for_each(|x| *x /= n);
    }
    let mut leaf_set = BTreeSet::new();
    for c in children {
        leaf_set.extend(c.leaf_set.iter().copied());
    }
    let depth = children.iter().map(|c| c.depth).max().unwrap_or(0) + 1;
    Ok(FrontierNode {
        id,
        dv,
        di,
        leaf_set,
        depth,
    })
}

/// Statistics computed for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatrices {
    pub correlation: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub distances: DistanceMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMerge {
    pub children: Vec<NodeId>,
    pub parent: NodeId,
    pub leaf_set: BTreeSet<NodeId>,
    pub distance: Distance,
}

/// One reconstruction layer expressed in recovered-tree node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub layer: usize,
    /// Frontier order used for the layer's matrices.
    pub frontier: Vec<NodeId>,
    pub merges: Vec<LayerMerge>,
    /// `(child, parent)` for every chain promotion.
    pub chain_promotions: Vec<(NodeId, NodeId)>,
    pub ridge: f64,
    pub degenerate: Vec<NodeId>,
    pub matrices: Option<LayerMatrices>,
}

impl LayerRecord {
    /// Largest merge distance of the layer.
    pub fn distance(&self) -> Option<Distance> {
        self.merges.iter().map(|m| m.distance).max()
    }

    pub fn merged_leaf_sets(&self) -> BTreeSet<BTreeSet<NodeId>> {
        self.merges.iter().map(|m| m.leaf_set.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredTopology {
    pub topology: GridTopology,
    pub layers: Vec<LayerRecord>,
}

impl RecoveredTopology {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// One line per merge and chain promotion, e.g.
    /// `Step 1: Nodes 7, 8, 9 (Distance=0.1766)`.
    pub fn step_log(&self) -> String {
        let mut out = String::new();
        for layer in &self.layers {
            for m in &layer.merges {
                let _ = writeln!(
                    out,
                    "Step {}: Nodes {} (Distance={})",
                    layer.layer,
                    join(&m.leaf_set),
                    m.distance
                );
            }
            for (child, _) in &layer.chain_promotions {
                let leaves = self.leaf_set_of(*child);
                let _ = writeln!(out, "Step {}: chain {}", layer.layer, join(&leaves));
            }
        }
        out
    }

    fn leaf_set_of(&self, node: NodeId) -> BTreeSet<NodeId> {
        let index = self.topology.index().expect("recovered tree is valid");
        let pos = index.position(node).expect("node in tree");
        index.leaf_sets().swap_remove(pos)
    }
}

fn join(set: &BTreeSet<NodeId>) -> String {
    set.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn recover(
    measurements: &MeasurementSet,
    options: &RecoveryOptions,
) -> Result<RecoveredTopology, RecoveryError> {
    let leaves = measurements.leaves();
    if leaves.len() < 2 {
        return Err(RecoveryError::TooFewLeaves(leaves.len()));
    }
    if !(options.resistance > 0.0 && options.resistance.is_finite()) {
        return Err(RecoveryError::BadResistance(options.resistance));
    }
    if !(options.threshold >= 0.0 && options.threshold.is_finite()) {
        return Err(RecoveryError::BadThreshold(options.threshold));
    }
    let t = measurements.samples();
    if t < 2 {
        return Err(SignalError::TooFewSamples {
            required: 2,
            got: t,
        }
        .into());
    }

    let mut frontier: Vec<FrontierNode> = leaves
        .iter()
        .enumerate()
        .map(|(j, &leaf)| FrontierNode {
            id: FrontierId(leaf.0),
            dv: measurements.dv().column(j).iter().copied().collect(),
            di: measurements.di().column(j).iter().copied().collect(),
            leaf_set: BTreeSet::from([leaf]),
            depth: 0,
        })
        .collect();
    let mut next_id = leaves.iter().map(|l| l.0).max().expect("leaves") + 1;
    let mut parent_of: BTreeMap<FrontierId, FrontierId> = BTreeMap::new();
    let limit = leaves.len() + 16;

    struct RawLayer {
        frontier: Vec<FrontierId>,
        step: GroupingStep,
        parents: Vec<FrontierId>,
        ridge: f64,
        degenerate: Vec<FrontierId>,
        matrices: Option<LayerMatrices>,
    }
    let mut raw_layers: Vec<RawLayer> = Vec::new();

    while frontier.len() > 1 {
        if raw_layers.len() >= limit {
            return Err(RecoveryError::LayerLimitExceeded(limit));
        }
        let k = frontier.len();
        let x = DMatrix::from_fn(t, k, |row, col| frontier[col].dv[row]);
        let scaled = standard_scale(&x)?;
        let sigma = stats::correlation(&scaled.data)?;
        let theta = stats::precision(&sigma, options.ridge)?;
        let dist = stats::distances(&theta);
        let step = group_layer(&frontier, &dist, options.threshold)?;

        let by_id: BTreeMap<FrontierId, &FrontierNode> =
            frontier.iter().map(|n| (n.id, n)).collect();
        let mut next_frontier = Vec::with_capacity(k);
        let mut parents = Vec::new();
        let groups = step
            .merges
            .iter()
            .map(|m| m.children.clone())
            .chain(step.chain_promotions.iter().map(|&c| vec![c]));
        for children in groups {
            let id = FrontierId(next_id);
            next_id += 1;
            let nodes: Vec<&FrontierNode> = children.iter().map(|c| by_id[c]).collect();
            next_frontier.push(diffuse_parent(&nodes, options.resistance, id)?);
            for c in children {
                parent_of.insert(c, id);
            }
            parents.push(id);
        }

        raw_layers.push(RawLayer {
            frontier: frontier.iter().map(|n| n.id).collect(),
            degenerate: scaled
                .degenerate_columns
                .iter()
                .map(|&j| frontier[j].id)
                .collect(),
            ridge: theta.ridge,
            matrices: options.keep_matrices.then(|| LayerMatrices {
                correlation: sigma.matrix.clone(),
                precision: theta.matrix.clone(),
                distances: dist.clone(),
            }),
            step,
            parents,
        });
        next_frontier.sort_by_key(|n| n.id);
        frontier = next_frontier;
    }

    let root = frontier[0].id;
    let ids = renumber(root, &parent_of, leaves);
    let node = |f: &FrontierId| ids[f];

    let mut nodes = BTreeMap::new();
    let mut segments = Vec::new();
    for (child, parent) in &parent_of {
        segments.push(LineSegment::resistive(
            node(parent),
            node(child),
            options.resistance,
        ));
    }
    let inner: BTreeSet<FrontierId> = parent_of.values().copied().collect();
    for (f, &n) in &ids {
        let kind = if *f == root {
            NodeKind::Root
        } else if !inner.contains(f) {
            NodeKind::Leaf
        } else {
            NodeKind::Hidden
        };
        nodes.insert(n, kind);
    }
    segments.sort_by_key(|s| (s.parent, s.child));
    let topology = GridTopology {
        nodes,
        segments,
        nominal_voltage: options.nominal_voltage,
    };

    let layers = raw_layers
        .into_iter()
        .enumerate()
        .map(|(i, raw)| {
            let n_merges = raw.step.merges.len();
            LayerRecord {
                layer: i + 1,
                frontier: raw.frontier.iter().map(node).collect(),
                merges: raw
                    .step
                    .merges
                    .into_iter()
                    .zip(&raw.parents)
                    .map(|(m, p)| LayerMerge {
                        children: m.children.iter().map(node).collect(),
                        parent: node(p),
                        leaf_set: m.leaf_set,
                        distance: m.distance,
                    })
                    .collect(),
                chain_promotions: raw
                    .step
                    .chain_promotions
                    .iter()
                    .zip(&raw.parents[n_merges..])
                    .map(|(c, p)| (node(c), node(p)))
                    .collect(),
                ridge: raw.ridge,
                degenerate: raw.degenerate.iter().map(node).collect(),
                matrices: raw.matrices,
            }
        })
        .collect();

    Ok(RecoveredTopology { topology, layers })
}

/// Root becomes 1; hidden nodes follow breadth-first (siblings by smallest
/// descendant leaf), skipping ids held by leaves. Leaves keep their ids.
fn renumber(
    root: FrontierId,
    parent_of: &BTreeMap<FrontierId, FrontierId>,
    leaves: &[NodeId],
) -> BTreeMap<FrontierId, NodeId> {
    let mut children: BTreeMap<FrontierId, Vec<FrontierId>> = BTreeMap::new();
    for (&c, &p) in parent_of {
        children.entry(p).or_default().push(c);
    }
    let mut min_leaf: BTreeMap<FrontierId, u32> = BTreeMap::new();
    fn fill(
        n: FrontierId,
        children: &BTreeMap<FrontierId, Vec<FrontierId>>,
        out: &mut BTreeMap<FrontierId, u32>,
    ) -> u32 {
        let v = match children.get(&n) {
            Some(kids) => kids
                .iter()
                .map(|&k| fill(k, children, out))
                .min()
                .unwrap_or(u32::MAX),
            None => n.0,
        };
        out.insert(n, v);
        v
    }
    fill(root, &children, &mut min_leaf);

    let taken: BTreeSet<u32> = leaves.iter().map(|l| l.0).collect();
    let mut next = 0;
    let mut ids = BTreeMap::new();
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        match children.get(&n) {
            Some(kids) => {
                next += 1;
                while taken.contains(&next) {
                    next += 1;
                }
                ids.insert(n, NodeId(next));
                let mut kids = kids.clone();
                kids.sort_by_key(|k| (min_leaf[k], *k));
                queue.extend(kids);
            }
            None => {
                ids.insert(n, NodeId(n.0));
            }
        }
    }
    ids
}
