//! Backward-forward sweep power flow for radial networks with constant-power
//! loads.
//!
//! Each iteration aggregates injection currents from the leaves towards the
//! root (KCL), then walks from the root down applying the segment voltage
//! drops (KVL). Complex arithmetic is kept throughout even though the
//! bundled networks are purely resistive.

use std::collections::BTreeMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{GridTopology, NodeId, NodeKind, TreeIndex, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafLoad {
    pub active_power: f64,
    pub power_factor: f64,
}

impl LeafLoad {
    pub fn new(active_power: f64, power_factor: f64) -> Self {
        Self {
            active_power,
            power_factor,
        }
    }

    /// Complex power drawn by the load, lagging.
    pub fn complex_power(&self) -> Complex64 {
        let p = self.active_power;
        let q = if self.power_factor >= 1.0 {
            0.0
        } else {
            p * (1.0 - self.power_factor.powi(2)).sqrt() / self.power_factor
        };
        Complex64::new(p, q)
    }
}

/// Per-leaf loads. Leaves absent from the map draw nothing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadAssignment {
    pub loads: BTreeMap<NodeId, LeafLoad>,
}

impl LoadAssignment {
    pub fn with_power_factor(powers: impl IntoIterator<Item = (NodeId, f64)>, pf: f64) -> Self {
        Self {
            loads: powers
                .into_iter()
                .map(|(n, p)| (n, LeafLoad::new(p, pf)))
                .collect(),
        }
    }

    pub fn total_active_power(&self) -> f64 {
        self.loads.values().map(|l| l.active_power).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the largest change of any nodal voltage
    /// magnitude between iterations, in volts.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub node_voltage: BTreeMap<NodeId, Complex64>,
    /// Current flowing from parent to child, keyed by the segment's child.
    pub branch_current: BTreeMap<NodeId, Complex64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest voltage-magnitude change observed at each iteration.
    pub max_delta_history: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    InvalidTopology(#[from] ValidationReport),
    #[error("invalid load at node {node}: {reason}")]
    InvalidLoad { node: NodeId, reason: String },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("voltage collapse at node {node} in iteration {iteration}: |V| = {magnitude:.3} V")]
    VoltageCollapse {
        node: NodeId,
        iteration: usize,
        magnitude: f64,
    },
}

/// Solves one snapshot.
pub fn solve(
    topology: &GridTopology,
    loads: &LoadAssignment,
    options: &SolverOptions,
) -> Result<FlowSolution, PowerFlowError> {
    let sweep = Sweep::new(topology)?;
    let injections = sweep.injections(loads)?;
    let raw = sweep.run(&injections, options)?;
    Ok(sweep.solution(raw))
}

/// Residual of the active-power balance: power delivered at the root minus
/// leaf demand minus I²R losses, in watts.
pub fn check_power_balance(
    topology: &GridTopology,
    loads: &LoadAssignment,
    solution: &FlowSolution,
) -> f64 {
    let root = topology
        .nodes
        .iter()
        .find(|(_, &k)| k == NodeKind::Root)
        .map(|(&n, _)| n);
    let Some(root) = root else { return 0.0 };
    let v_root = solution.node_voltage[&root];
    let root_current: Complex64 = topology
        .segments
        .iter()
        .filter(|s| s.parent == root)
        .map(|s| solution.branch_current[&s.child])
        .sum();
    let supplied = (v_root * root_current.conj()).re;
    let losses: f64 = topology
        .segments
        .iter()
        .map(|s| solution.branch_current[&s.child].norm_sqr() * s.resistance)
        .sum();
    (supplied - loads.total_active_power() - losses).abs()
}

/// Reusable solver state for one topology, so time series do not re-index
/// the tree per snapshot.
#[derive(Debug, Clone)]
pub struct Sweep {
    index: TreeIndex,
    impedance: Vec<Complex64>,
}

/// Voltages and branch currents by tree position.
#[derive(Debug, Clone)]
pub struct RawSolution {
    pub voltage: Vec<Complex64>,
    pub current: Vec<Complex64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_delta_history: Vec<f64>,
}

impl Sweep {
    pub fn new(topology: &GridTopology) -> Result<Self, ValidationReport> {
        let index = topology.index()?;
        let impedance = index
            .resistance
            .iter()
            .zip(&index.reactance)
            .map(|(&r, &x)| Complex64::new(r, x))
            .collect();
        Ok(Self { index, impedance })
    }

    pub fn index(&self) -> &TreeIndex {
        &self.index
    }

    /// Complex power per tree position.
    pub fn injections(&self, loads: &LoadAssignment) -> Result<Vec<Complex64>, PowerFlowError> {
        let mut s = vec![Complex64::new(0.0, 0.0); self.index.len()];
        for (&node, load) in &loads.loads {
            let invalid = |reason: &str| PowerFlowError::InvalidLoad {
                node,
                reason: reason.to_string(),
            };
            let pos = self
                .index
                .position(node)
                .ok_or_else(|| invalid("node is not in the topology"))?;
            if self.index.kinds[pos] != NodeKind::Leaf {
                return Err(invalid("loads may only be attached to leaves"));
            }
            if !(load.active_power >= 0.0 && load.active_power.is_finite()) {
                return Err(invalid("active power must be finite and non-negative"));
            }
            if !(load.power_factor > 0.0 && load.power_factor <= 1.0) {
                return Err(invalid("power factor must lie in (0, 1]"));
            }
            s[pos] = load.complex_power();
        }
        Ok(s)
    }

    pub fn run(
        &self,
        injections: &[Complex64],
        options: &SolverOptions,
    ) -> Result<RawSolution, PowerFlowError> {
        if options.tol.is_nan() || options.tol <= 0.0 {
            return Err(PowerFlowError::BadTolerance(options.tol));
        }
        let n = self.index.len();
        let v0 = Complex64::new(self.index.nominal_voltage, 0.0);
        let collapse = 0.5 * self.index.nominal_voltage;
        let mut voltage = vec![v0; n];
        let mut current = vec![Complex64::new(0.0, 0.0); n];
        let mut history = Vec::new();

        for iteration in 1..=options.max_iter {
            // backward: leaf injections, then KCL towards the root
            for pos in (0..n).rev() {
                let own = if injections[pos] == Complex64::new(0.0, 0.0) {
                    Complex64::new(0.0, 0.0)
                } else {
                    (injections[pos] / voltage[pos]).conj()
                };
                let downstream: Complex64 =
                    self.index.children[pos].iter().map(|&c| current[c]).sum();
                current[pos] = own + downstream;
            }
            // forward: KVL from the root down
            let mut max_delta: f64 = 0.0;
            for pos in 1..n {
                let parent = self.index.parent[pos].expect("non-root has parent");
                let next = voltage[parent] - self.impedance[pos] * current[pos];
                let magnitude = next.norm();
                if magnitude.is_nan() || magnitude < collapse {
                    return Err(PowerFlowError::VoltageCollapse {
                        node: self.index.order[pos],
                        iteration,
                        magnitude,
                    });
                }
                max_delta = max_delta.max((magnitude - voltage[pos].norm()).abs());
                voltage[pos] = next;
            }
            history.push(max_delta);
            if max_delta < options.tol {
                return Ok(RawSolution {
                    voltage,
                    current,
                    iterations: iteration,
                    converged: true,
                    max_delta_history: history,
                });
            }
        }
        Ok(RawSolution {
            voltage,
            current,
            iterations: options.max_iter,
            converged: false,
            max_delta_history: history,
        })
    }

    pub fn solution(&self, raw: RawSolution) -> FlowSolution {
        let node_voltage = self
            .index
            .order
            .iter()
            .zip(&raw.voltage)
            .map(|(&n, &v)| (n, v))
            .collect();
        let branch_current = self
            .index
            .order
            .iter()
            .zip(&raw.current)
            .skip(1)
            .map(|(&n, &i)| (n, i))
            .collect();
        FlowSolution {
            node_voltage,
            branch_current,
            iterations: raw.iterations,
            converged: raw.converged,
            max_delta_history: raw.max_delta_history,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::build_fixture;
    use crate::grid::DEFAULT_SEGMENT_RESISTANCE;

    fn two_bus() -> GridTopology {
        let parents = BTreeMap::from([(NodeId(2), NodeId(1))]);
        GridTopology::from_parent_map(&parents, DEFAULT_SEGMENT_RESISTANCE, 400.0)
    }

    #[test]
    fn two_bus_matches_quadratic_root() {
        // V^2 - 400 V + R P = 0, larger root
        let r = DEFAULT_SEGMENT_RESISTANCE;
        let p = 4000.0;
        let expected = (400.0 + (400.0_f64.powi(2) - 4.0 * r * p).sqrt()) / 2.0;
        let loads = LoadAssignment::with_power_factor([(NodeId(2), p)], 1.0);
        let sol = solve(&two_bus(), &loads, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        let v = sol.node_voltage[&NodeId(2)].norm();
        assert!((v - expected).abs() < 1e-6, "{v} vs {expected}");
        assert!((v - 399.91).abs() < 1e-2);
        assert!(check_power_balance(&two_bus(), &loads, &sol) < 1e-6);
    }

    #[test]
    fn zero_load_is_flat() {
        let t = build_fixture("sys11").unwrap();
        let loads =
            LoadAssignment::with_power_factor(t.leaves().into_iter().map(|l| (l, 0.0)), 1.0);
        let sol = solve(&t, &loads, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        for v in sol.node_voltage.values() {
            assert_eq!(*v, Complex64::new(400.0, 0.0));
        }
        for i in sol.branch_current.values() {
            assert_eq!(i.norm(), 0.0);
        }
        assert_eq!(check_power_balance(&t, &loads, &sol), 0.0);
    }

    #[test]
    fn symmetric_siblings_match() {
        let t = build_fixture("sys6").unwrap();
        let loads =
            LoadAssignment::with_power_factor(t.leaves().into_iter().map(|l| (l, 3000.0)), 1.0);
        let sol = solve(&t, &loads, &SolverOptions::default()).unwrap();
        assert_eq!(
            sol.node_voltage[&NodeId(4)].norm(),
            sol.node_voltage[&NodeId(5)].norm()
        );
    }

    #[test]
    fn load_on_hidden_node_is_rejected() {
        let t = build_fixture("sys6").unwrap();
        let loads = LoadAssignment::with_power_factor([(NodeId(2), 100.0)], 1.0);
        assert!(matches!(
            solve(&t, &loads, &SolverOptions::default()),
            Err(PowerFlowError::InvalidLoad {
                node: NodeId(2),
                ..
            })
        ));
    }

    #[test]
    fn bad_power_factor_is_rejected() {
        let loads = LoadAssignment::with_power_factor([(NodeId(2), 100.0)], 0.0);
        assert!(matches!(
            solve(&two_bus(), &loads, &SolverOptions::default()),
            Err(PowerFlowError::InvalidLoad { .. })
        ));
    }

    #[test]
    fn heavy_load_collapses() {
        let loads = LoadAssignment::with_power_factor([(NodeId(2), 1e7)], 1.0);
        assert!(matches!(
            solve(&two_bus(), &loads, &SolverOptions::default()),
            Err(PowerFlowError::VoltageCollapse {
                node: NodeId(2),
                ..
            })
        ));
    }

    #[test]
    fn iteration_cap_is_flagged_not_raised() {
        let loads = LoadAssignment::with_power_factor([(NodeId(2), 4000.0)], 1.0);
        let opts = SolverOptions {
            tol: 1e-15,
            max_iter: 2,
        };
        let sol = solve(&two_bus(), &loads, &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 2);
        assert_eq!(sol.max_delta_history.len(), 2);
    }

    #[test]
    fn reactive_loads_converge() {
        let t = build_fixture("sys11").unwrap();
        let loads =
            LoadAssignment::with_power_factor(t.leaves().into_iter().map(|l| (l, 2500.0)), 0.9);
        let sol = solve(&t, &loads, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(check_power_balance(&t, &loads, &sol) < 1e-4 * loads.total_active_power());
    }
}
