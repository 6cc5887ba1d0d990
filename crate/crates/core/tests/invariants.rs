use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;

use lvtopo_core::grid::{GridTopology, NodeId, NodeKind, DEFAULT_SEGMENT_RESISTANCE};
use lvtopo_core::powerflow::{solve, LoadAssignment, SolverOptions};
use lvtopo_core::signals::standard_scale;
use lvtopo_core::stats::{correlation, distances, precision, Distance};

/// Random rooted tree on ids `1..=n`, parents numbered below children.
fn arb_tree(max_nodes: usize) -> impl Strategy<Value = GridTopology> {
    prop::collection::vec(any::<prop::sample::Index>(), 1..max_nodes).prop_map(|picks| {
        let parents: BTreeMap<NodeId, NodeId> = picks
            .iter()
            .enumerate()
            .map(|(i, pick)| {
                let child = i as u32 + 2;
                (NodeId(child), NodeId(pick.index(i + 1) as u32 + 1))
            })
            .collect();
        GridTopology::from_parent_map(&parents, DEFAULT_SEGMENT_RESISTANCE, 400.0)
    })
}

fn arb_series(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> impl Strategy<Value = DMatrix<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-100.0f64..100.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn json_round_trip(t in arb_tree(64)) {
        prop_assert!(t.validate().is_ok());
        let back = GridTopology::from_json(&t.to_json()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn currents_balance_and_voltage_falls(
        t in arb_tree(40),
        seed_loads in prop::collection::vec(0.0f64..8_000.0, 40),
    ) {
        let loads = LoadAssignment::with_power_factor(
            t.leaves().into_iter().zip(seed_loads),
            1.0,
        );
        let sol = solve(&t, &loads, &SolverOptions::default()).unwrap();
        prop_assert!(sol.converged);
        let total = loads.total_active_power() / 400.0 + 1.0;
        for seg in &t.segments {
            let through = sol.branch_current[&seg.child];
            let out = match t.nodes[&seg.child] {
                NodeKind::Leaf => {
                    let s = loads.loads[&seg.child].complex_power();
                    (s / sol.node_voltage[&seg.child]).conj()
                }
                _ => t
                    .segments
                    .iter()
                    .filter(|s| s.parent == seg.child)
                    .map(|s| sol.branch_current[&s.child])
                    .sum(),
            };
            prop_assert!((through - out).norm() <= 1e-6 * total);
            let (vp, vc) = (sol.node_voltage[&seg.parent].norm(), sol.node_voltage[&seg.child].norm());
            prop_assert!(vc <= vp + 1e-9);
        }
    }

    #[test]
    fn affine_rescaling_keeps_correlation(
        x in arb_series(5..40, 1..6),
        a in prop::sample::select(vec![-3.0, 0.01, 2.5, 1e3]),
        b in -50.0f64..50.0,
    ) {
        let y = x.map(|v| a * v + b);
        let (sx, sy) = (standard_scale(&x).unwrap(), standard_scale(&y).unwrap());
        prop_assume!(sx.degenerate_columns.is_empty() && sy.degenerate_columns.is_empty());
        let (cx, cy) = (correlation(&sx.data).unwrap(), correlation(&sy.data).unwrap());
        // a negative factor flips the sign of every column at once
        prop_assert!((cx.matrix - cy.matrix).amax() < 1e-9);
    }

    #[test]
    fn column_permutation_permutes_correlation(
        x in arb_series(4..30, 2..7),
        shift in 1usize..6,
    ) {
        let k = x.ncols();
        let perm: Vec<usize> = (0..k).map(|j| (j + shift) % k).collect();
        let y = DMatrix::from_fn(x.nrows(), k, |r, c| x[(r, perm[c])]);
        let (cx, cy) = (correlation(&x).unwrap(), correlation(&y).unwrap());
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(cy.matrix[(i, j)], cx.matrix[(perm[i], perm[j])]);
            }
        }
    }

    #[test]
    fn distances_are_symmetric_and_positive(x in arb_series(3..30, 2..8)) {
        let scaled = standard_scale(&x).unwrap();
        let theta = precision(&correlation(&scaled.data).unwrap(), 0.0).unwrap();
        let d = distances(&theta);
        for i in 0..d.len() {
            prop_assert!(d.get(i, i).is_none());
            for j in 0..i {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                match d.get(i, j).unwrap() {
                    Distance::Finite(v) => prop_assert!(v > 0.0),
                    Distance::NoDependency => {}
                }
            }
        }
    }
}
