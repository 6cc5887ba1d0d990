//! Comparison of a recovered tree against ground truth.
//!
//! Hidden-node ids in a recovered tree are synthetic, so a line is identified
//! by the set of leaves below it. Each tree yields a multiset of such
//! clusters; a chain of single-child poles contributes the same cluster once
//! per segment, so wrong chain depths are visible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::grid::{GridTopology, NodeId, NodeKind, TreeIndex, ValidationReport};

/// Largest tree accepted by [`brute_force_equivalence`].
pub const MAX_BRUTE_FORCE_NODES: usize = 12;

pub type Cluster = BTreeSet<NodeId>;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("leaf sets differ: truth has {truth:?}, recovered has {recovered:?}")]
    LeafSetMismatch {
        truth: Vec<NodeId>,
        recovered: Vec<NodeId>,
    },
    #[error("tree with {0} nodes exceeds the brute-force limit of {MAX_BRUTE_FORCE_NODES}")]
    TooLarge(usize),
    #[error(transparent)]
    Invalid(#[from] ValidationReport),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    /// `matched_clusters / max(total_true_edges, total_recovered_edges)`.
    pub recovery_ratio: f64,
    pub matched_clusters: usize,
    pub total_true_edges: usize,
    pub total_recovered_edges: usize,
    /// True clusters with no counterpart, one entry per unmatched occurrence.
    pub missing: Vec<Cluster>,
    /// Recovered clusters with no counterpart.
    pub spurious: Vec<Cluster>,
}

impl RecoveryReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "recovery_ratio={}", self.recovery_ratio);
        let _ = writeln!(out, "matched_clusters={}", self.matched_clusters);
        let _ = writeln!(out, "total_true_edges={}", self.total_true_edges);
        let _ = writeln!(out, "total_recovered_edges={}", self.total_recovered_edges);
        for (label, list) in [("missing", &self.missing), ("spurious", &self.spurious)] {
            for c in list {
                let ids: Vec<String> = c.iter().map(|n| n.to_string()).collect();
                let _ = writeln!(out, "{label}={{{}}}", ids.join(","));
            }
        }
        out
    }
}

/// Leaf cluster of every segment, with multiplicity.
pub fn clusters(topology: &GridTopology) -> Result<BTreeMap<Cluster, usize>, ValidationReport> {
    let index = topology.index()?;
    let mut out = BTreeMap::new();
    for set in index.leaf_sets().into_iter().skip(1) {
        *out.entry(set).or_insert(0) += 1;
    }
    Ok(out)
}

pub fn recovery_ratio(
    truth: &GridTopology,
    recovered: &GridTopology,
) -> Result<RecoveryReport, MetricsError> {
    let (ct, cr) = (clusters(truth)?, clusters(recovered)?);
    let (lt, lr) = (truth.leaves(), recovered.leaves());
    if lt != lr {
        return Err(MetricsError::LeafSetMismatch {
            truth: lt,
            recovered: lr,
        });
    }
    let mut matched = 0;
    let mut missing = Vec::new();
    let mut spurious = Vec::new();
    for (c, &n) in &ct {
        let m = cr.get(c).copied().unwrap_or(0);
        matched += n.min(m);
        missing.extend(std::iter::repeat_n(c.clone(), n.saturating_sub(m)));
    }
    for (c, &m) in &cr {
        let n = ct.get(c).copied().unwrap_or(0);
        spurious.extend(std::iter::repeat_n(c.clone(), m.saturating_sub(n)));
    }
    let total_true_edges = truth.segments.len();
    let total_recovered_edges = recovered.segments.len();
    let denominator = total_true_edges.max(total_recovered_edges);
    let recovery_ratio = if denominator == 0 {
        1.0
    } else {
        matched as f64 / denominator as f64
    };
    Ok(RecoveryReport {
        recovery_ratio,
        matched_clusters: matched,
        total_true_edges,
        total_recovered_edges,
        missing,
        spurious,
    })
}

/// Canonical string of a rooted leaf-labelled tree: leaves print their id,
/// inner nodes print their children's canonical strings sorted and
/// parenthesized. Hidden-node ids do not appear.
pub fn canonical_form(topology: &GridTopology) -> Result<String, ValidationReport> {
    let index = topology.index()?;
    Ok(canonical_at(&index, 0))
}

fn canonical_at(index: &TreeIndex, pos: usize) -> String {
    if index.kinds[pos] == NodeKind::Leaf {
        return index.order[pos].to_string();
    }
    let mut parts: Vec<String> = index.children[pos]
        .iter()
        .map(|&c| canonical_at(index, c))
        .collect();
    parts.sort();
    format!("({})", parts.join(","))
}

/// Rooted leaf-labelled isomorphism by canonical-form comparison.
pub fn brute_force_equivalence(
    truth: &GridTopology,
    recovered: &GridTopology,
) -> Result<bool, MetricsError> {
    for t in [truth, recovered] {
        if t.nodes.len() > MAX_BRUTE_FORCE_NODES {
            return Err(MetricsError::TooLarge(t.nodes.len()));
        }
    }
    Ok(canonical_form(truth)? == canonical_form(recovered)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::build_fixture;
    use crate::grid::DEFAULT_SEGMENT_RESISTANCE;

    fn tree(edges: &[(u32, u32)]) -> GridTopology {
        let parents = edges.iter().map(|&(p, c)| (NodeId(c), NodeId(p))).collect();
        GridTopology::from_parent_map(&parents, DEFAULT_SEGMENT_RESISTANCE, 400.0)
    }

    fn set(ids: &[u32]) -> Cluster {
        ids.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn identity_scores_one() {
        let t = build_fixture("sys15").unwrap();
        let r = recovery_ratio(&t, &t).unwrap();
        assert_eq!(r.recovery_ratio, 1.0);
        assert!(r.missing.is_empty() && r.spurious.is_empty());
    }

    #[test]
    fn star_against_sys6() {
        // truth clusters {4},{5},{6},{4,5},{6}; star has {4},{5},{6}
        let truth = build_fixture("sys6").unwrap();
        let star = tree(&[(1, 4), (1, 5), (1, 6)]);
        let r = recovery_ratio(&truth, &star).unwrap();
        assert_eq!(r.matched_clusters, 3);
        assert_eq!(r.total_true_edges, 5);
        assert_eq!(r.recovery_ratio, 0.6);
        assert_eq!(r.missing, vec![set(&[4, 5]), set(&[6])]);
        assert!(r.spurious.is_empty());
        assert!(!brute_force_equivalence(&truth, &star).unwrap());
    }

    #[test]
    fn extra_chain_is_penalized() {
        let truth = tree(&[(1, 2), (1, 3)]);
        let chained = tree(&[(1, 4), (4, 2), (1, 3)]);
        let r = recovery_ratio(&truth, &chained).unwrap();
        assert_eq!(r.spurious, vec![set(&[2])]);
        assert!(r.recovery_ratio < 1.0);
        assert!(!brute_force_equivalence(&truth, &chained).unwrap());
    }

    #[test]
    fn hidden_relabelling_is_equivalent() {
        let a = build_fixture("sys6").unwrap();
        let b = tree(&[(1, 3), (1, 2), (3, 4), (3, 5), (2, 6)]);
        assert!(brute_force_equivalence(&a, &b).unwrap());
        assert_eq!(recovery_ratio(&a, &b).unwrap().recovery_ratio, 1.0);
    }

    #[test]
    fn mismatched_leaves() {
        let a = tree(&[(1, 2), (1, 3)]);
        let b = tree(&[(1, 2), (1, 4)]);
        assert!(matches!(
            recovery_ratio(&a, &b),
            Err(MetricsError::LeafSetMismatch { .. })
        ));
    }

    #[test]
    fn brute_force_size_limit() {
        let big = build_fixture("sys15").unwrap();
        assert!(matches!(
            brute_force_equivalence(&big, &big),
            Err(MetricsError::TooLarge(15))
        ));
    }

    #[test]
    fn report_text_lists_clusters() {
        let truth = build_fixture("sys6").unwrap();
        let star = tree(&[(1, 4), (1, 5), (1, 6)]);
        let text = recovery_ratio(&truth, &star).unwrap().to_text();
        assert!(text.contains("recovery_ratio=0.6\n"));
        assert!(text.contains("missing={4,5}\n"));
    }
}
