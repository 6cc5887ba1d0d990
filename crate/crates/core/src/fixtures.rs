//! Bundled test networks.
//!
//! The published drawings of the 11/15/20/25-node systems are not available as
//! data, so each fixture is reconstructed from its recorded grouping sequence
//! under the layered rule used by [`crate::recovery`]:
//!
//! * every listed merge at a layer creates one common parent for the frontier
//!   nodes whose leaf sets it covers;
//! * every frontier node not covered by a merge gets a single-child parent;
//! * the last layer merges the remaining two frontier nodes into the root.
//!
//! Hidden nodes are then numbered breadth-first from the root (root = 1),
//! siblings ordered by their smallest descendant leaf, and the leaves keep
//! the ids they carry in the sequences. Under this rule the construction is
//! unique, and the resulting counts are:
//!
//! | name  | nodes | leaves  | hidden | layers | merge sequence                                        |
//! |-------|-------|---------|--------|--------|-------------------------------------------------------|
//! | sys6  | 6     | 4..=6   | 3      | 2      | {4,5}; root                                           |
//! | sys11 | 11    | 7..=11  | 6      | 3      | {7,8,9}; {10,11}; root                                |
//! | sys15 | 15    | 11..=15 | 10     | 4      | {11,12}; {11,12,13}; {14,15}; root                    |
//! | sys20 | 20    | 11..=20 | 10     | 4      | {18,19} {11,12,13} {14..17}; {14..19}; {14..20}; root |
//! | sys25 | 25    | 16..=25 | 15     | 5      | {16,17} {18,19,20} {22,23,24}; {16..20}; {22..25}; {16..21}; root |
//!
//! Layer sizes for sys25, as a check on the hidden count: five parents at
//! layer 1 (three merges, chains over 21 and 25), four at layer 2, three at
//! layer 3, two at layer 4 and the root: 5 + 4 + 3 + 2 + 1 = 15.
//!
//! sys6 is the small worked example (edges 1-2, 1-3, 2-4, 2-5, 3-6); it is
//! written out directly and equals the layered construction above.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::grid::{
    GridError, GridTopology, NodeId, DEFAULT_NOMINAL_VOLTAGE, DEFAULT_SEGMENT_RESISTANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FixtureName {
    Sys6,
    Sys11,
    Sys15,
    Sys20,
    Sys25,
}

impl FixtureName {
    pub const ALL: [FixtureName; 5] = [
        FixtureName::Sys6,
        FixtureName::Sys11,
        FixtureName::Sys15,
        FixtureName::Sys20,
        FixtureName::Sys25,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FixtureName::Sys6 => "sys6",
            FixtureName::Sys11 => "sys11",
            FixtureName::Sys15 => "sys15",
            FixtureName::Sys20 => "sys20",
            FixtureName::Sys25 => "sys25",
        }
    }

    /// Sample count at which the recorded sequence was obtained, if any.
    pub fn reference_samples(self) -> Option<usize> {
        match self {
            FixtureName::Sys6 => None,
            FixtureName::Sys11 | FixtureName::Sys15 => Some(1_000),
            FixtureName::Sys20 => Some(15_000),
            FixtureName::Sys25 => Some(5_000),
        }
    }
}

impl fmt::Display for FixtureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FixtureName {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FixtureName::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| GridError::UnknownFixture(s.to_string()))
    }
}

/// A fixture together with the merge sequence it was derived from.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: FixtureName,
    pub topology: GridTopology,
    /// Leaf sets merged at each layer, the last layer being the root merge.
    pub layers: Vec<Vec<BTreeSet<NodeId>>>,
}

pub fn build_fixture(name: &str) -> Result<GridTopology, GridError> {
    Ok(fixture(name.parse()?).topology)
}

pub fn fixture(name: FixtureName) -> Fixture {
    let (leaves, layers): (Vec<u32>, Vec<Vec<Vec<u32>>>) = match name {
        FixtureName::Sys6 => (vec![4, 5, 6], vec![vec![vec![4, 5]], vec![vec![4, 5, 6]]]),
        FixtureName::Sys11 => (
            (7..=11).collect(),
            vec![
                vec![vec![7, 8, 9]],
                vec![vec![10, 11]],
                vec![(7..=11).collect()],
            ],
        ),
        FixtureName::Sys15 => (
            (11..=15).collect(),
            vec![
                vec![vec![11, 12]],
                vec![vec![11, 12, 13]],
                vec![vec![14, 15]],
                vec![(11..=15).collect()],
            ],
        ),
        FixtureName::Sys20 => (
            (11..=20).collect(),
            vec![
                vec![vec![18, 19], vec![11, 12, 13], vec![14, 15, 16, 17]],
                vec![(14..=19).collect()],
                vec![(14..=20).collect()],
                vec![(11..=20).collect()],
            ],
        ),
        FixtureName::Sys25 => (
            (16..=25).collect(),
            vec![
                vec![vec![16, 17], vec![18, 19, 20], vec![22, 23, 24]],
                vec![(16..=20).collect()],
                vec![(22..=25).collect()],
                vec![(16..=21).collect()],
                vec![(16..=25).collect()],
            ],
        ),
    };
    let leaves: Vec<NodeId> = leaves.into_iter().map(NodeId).collect();
    let layers: Vec<Vec<BTreeSet<NodeId>>> = layers
        .into_iter()
        .map(|layer| {
            layer
                .into_iter()
                .map(|m| m.into_iter().map(NodeId).collect())
                .collect()
        })
        .collect();
    let topology = layered_tree(
        &leaves,
        &layers,
        DEFAULT_SEGMENT_RESISTANCE,
        DEFAULT_NOMINAL_VOLTAGE,
    )
    .expect("bundled merge sequences are consistent");
    Fixture {
        name,
        topology,
        layers,
    }
}

/// Builds the tree implied by a layered merge sequence (see module docs).
///
/// Returns `None` if a merge does not exactly cover a union of current
/// frontier nodes, if the sequence does not end in a single root, or if the
/// breadth-first hidden numbering would collide with a leaf id.
pub fn layered_tree(
    leaves: &[NodeId],
    layers: &[Vec<BTreeSet<NodeId>>],
    resistance: f64,
    nominal_voltage: f64,
) -> Option<GridTopology> {
    // Synthetic ids above every leaf id; renumbered at the end.
    let mut next = leaves.iter().map(|n| n.0).max()? + 1;
    let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
    let mut frontier: Vec<(BTreeSet<NodeId>, u32)> =
        leaves.iter().map(|&l| (BTreeSet::from([l]), l.0)).collect();

    for merges in layers {
        let mut used = vec![false; frontier.len()];
        let mut new_frontier = Vec::new();
        for m in merges {
            let mut covered = BTreeSet::new();
            let id = next;
            next += 1;
            for (i, (set, node)) in frontier.iter().enumerate() {
                if set.is_subset(m) {
                    if used[i] {
                        return None;
                    }
                    used[i] = true;
                    covered.extend(set.iter().copied());
                    parent.insert(*node, id);
                }
            }
            if &covered != m {
                return None;
            }
            new_frontier.push((covered, id));
        }
        for (i, (set, node)) in frontier.iter().enumerate() {
            if !used[i] {
                let id = next;
                next += 1;
                parent.insert(*node, id);
                new_frontier.push((set.clone(), id));
            }
        }
        frontier = new_frontier;
    }
    if frontier.len() != 1 {
        return None;
    }
    let root = frontier[0].1;

    // Breadth-first renumbering of hidden nodes.
    let mut children: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&c, &p) in &parent {
        children.entry(p).or_default().push(c);
    }
    let min_leaf = |start: u32| -> u32 {
        let mut best = u32::MAX;
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            match children.get(&n) {
                Some(kids) => stack.extend(kids),
                None => best = best.min(n),
            }
        }
        best
    };
    let leaf_ids: BTreeSet<u32> = leaves.iter().map(|n| n.0).collect();
    let mut relabel: BTreeMap<u32, u32> = BTreeMap::new();
    let mut counter = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        if leaf_ids.contains(&n) {
            relabel.insert(n, n);
        } else {
            counter += 1;
            if leaf_ids.contains(&counter) {
                return None;
            }
            relabel.insert(n, counter);
        }
        let mut kids = children.get(&n).cloned().unwrap_or_default();
        kids.sort_by_key(|&k| min_leaf(k));
        queue.extend(kids);
    }

    let parents = parent
        .iter()
        .map(|(c, p)| (NodeId(relabel[c]), NodeId(relabel[p])))
        .collect();
    Some(GridTopology::from_parent_map(
        &parents,
        resistance,
        nominal_voltage,
    ))
}
