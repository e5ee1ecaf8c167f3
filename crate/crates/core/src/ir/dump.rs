use std::fmt::Write;

use serde::Serialize;

use super::{ComputationGraph, Node, ValueRole};

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Versioned<'a> {
    schema_version: u32,
    #[serde(flatten)]
    graph: &'a ComputationGraph,
}

pub fn to_json(g: &ComputationGraph) -> serde_json::Result<String> {
    serde_json::to_string_pretty(&Versioned {
        schema_version: GRAPH_SCHEMA_VERSION,
        graph: g,
    })
}

/// Graphviz rendering: value nodes as ellipses, ops as boxes.
pub fn to_dot(g: &ComputationGraph, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{name}\" {{");
    let _ = writeln!(s, "  rankdir=LR;");
    for n in &g.nodes {
        match n {
            Node::Value(v) => {
                let color = match v.role {
                    ValueRole::Anchor => "lightblue",
                    ValueRole::Answer => "palegreen",
                    ValueRole::Weight => "lightgray",
                    _ => "white",
                };
                let _ = writeln!(
                    s,
                    "  {} [shape=ellipse, style=filled, fillcolor={color}, label=\"{}\\n{:?}\"];",
                    v.id,
                    escape(&v.label),
                    v.role
                );
            }
            Node::Op(o) => {
                let steps = g.functions.get(&o.id).map_or(0, |f| f.steps.len());
                let mut label = o.kind.name().to_string();
                if let Some(r) = o.attrs.relation {
                    let _ = write!(label, " r{r}");
                }
                if steps > 1 {
                    let _ = write!(label, "\\n{steps} steps");
                }
                let _ = writeln!(s, "  {} [shape=box, label=\"{label}\"];", o.id);
            }
        }
    }
    for (a, b) in &g.edges {
        let _ = writeln!(s, "  {a} -> {b};");
    }
    s.push_str("}\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
