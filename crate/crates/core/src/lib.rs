//! Topology recovery for radial low-voltage distribution networks from
//! smart-meter voltage and current increments.
//!
//! The pipeline is:
//!
//! * [`grid`] / [`fixtures`]: the rooted-tree network model and the bundled
//!   test systems;
//! * [`powerflow`]: backward-forward sweep AC power flow;
//! * [`signals`]: residential load profiles, time-series simulation and
//!   measurement sets of per-leaf increments;
//! * [`stats`]: correlation, precision and distance matrices;
//! * [`recovery`]: layer-by-layer grouping and increment diffusion up to
//!   the root;
//! * [`metrics`]: recovery ratio against a ground-truth tree;
//! * [`experiment`]: generate/recover/score sweeps.

pub mod experiment;
pub mod fixtures;
pub mod grid;
pub mod metrics;
pub mod powerflow;
pub mod recovery;
pub mod signals;
pub mod stats;

pub use fixtures::{build_fixture, fixture, Fixture, FixtureName};
pub use grid::{GridError, GridTopology, LineSegment, NodeId, NodeKind};
pub use metrics::{brute_force_equivalence, recovery_ratio, RecoveryReport};
pub use powerflow::{solve, FlowSolution, LoadAssignment, SolverOptions};
pub use recovery::{recover, RecoveredTopology, RecoveryOptions};
pub use signals::{MeasurementSet, ResidentialTemplate};
pub use stats::{Distance, DistanceMatrix};
