use std::fmt::Write as _;
use std::str::FromStr;

use lvtopo_core::{GridTopology, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Dot,
    Json,
}

#[derive(Debug, thiserror::Error)]
#[error("unknown format {0:?} (expected dot or json)")]
pub struct UnknownFormat(pub String);

impl FromStr for Format {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(Format::Dot),
            "json" => Ok(Format::Json),
            other => Err(UnknownFormat(other.to_string())),
        }
    }
}

pub fn render(topology: &GridTopology, format: Format, source: &str) -> String {
    match format {
        Format::Dot => to_dot(topology, source),
        Format::Json => topology.to_json(),
    }
}

/// Graphviz digraph, nodes by id and edges by `(parent, child)`.
pub fn to_dot(topology: &GridTopology, source: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "// source: {source}");
    out.push_str("digraph topology {\n");
    for (id, kind) in &topology.nodes {
        let (name, shape) = match kind {
            NodeKind::Root => ("root", "doublecircle"),
            NodeKind::Hidden => ("hidden", "circle"),
            NodeKind::Leaf => ("leaf", "box"),
        };
        let _ = writeln!(out, "  \"{id}\" [kind={name}, shape={shape}];");
    }
    let mut segments: Vec<_> = topology.segments.iter().collect();
    segments.sort_by_key(|s| (s.parent, s.child));
    for s in segments {
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\" [resistance_ohm={}];",
            s.parent, s.child, s.resistance
        );
    }
    out.push_str("}\n");
    out
}
