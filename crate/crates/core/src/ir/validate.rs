use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use serde::Serialize;

use super::{ComputationGraph, GraphLevel, Node, NodeId, OpKind, Operand, ValueRole};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    /// Node ids must equal their position.
    BadId { position: usize, id: NodeId },
    DanglingEdge { from: NodeId, to: NodeId },
    /// Edge joining two value nodes or two op nodes.
    NotBipartite { from: NodeId, to: NodeId },
    Cycle { nodes: Vec<NodeId> },
    NoInputs { op: NodeId },
    OutputCount { op: NodeId, count: usize },
    /// The op's operand/output lists disagree with the edge set.
    EdgeMismatch { op: NodeId },
    AnswerCount { count: usize },
    MissingFunction { op: NodeId },
    BadFunction { op: NodeId, detail: String },
    LevelMismatch { op: NodeId, kind: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadId { position, id } => write!(f, "node at position {position} has id {id}"),
            Violation::DanglingEdge { from, to } => write!(f, "edge {from}->{to} references a missing node"),
            Violation::NotBipartite { from, to } => write!(f, "edge {from}->{to} is not bipartite"),
            Violation::Cycle { nodes } => write!(f, "cycle through {nodes:?}"),
            Violation::NoInputs { op } => write!(f, "op {op} has no inputs"),
            Violation::OutputCount { op, count } => write!(f, "op {op} has {count} outputs"),
            Violation::EdgeMismatch { op } => write!(f, "op {op} operands disagree with edges"),
            Violation::AnswerCount { count } => write!(f, "{count} answer nodes"),
            Violation::MissingFunction { op } => write!(f, "op {op} has no function"),
            Violation::BadFunction { op, detail } => write!(f, "op {op}: {detail}"),
            Violation::LevelMismatch { op, kind } => write!(f, "op {op} of kind {kind} at wrong level"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(Error::InvalidGraph(msg.join("; ")))
        }
    }
}

/// Checks every IR invariant and lists each violation.
pub fn validate(g: &ComputationGraph) -> ValidationReport {
    let mut out = Vec::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if n.id().0 != i {
            out.push(Violation::BadId { position: i, id: n.id() });
        }
    }

    let mut edges_ok = Vec::new();
    for &(from, to) in &g.edges {
        match (g.node(from), g.node(to)) {
            (Some(a), Some(b)) => {
                if matches!((a, b), (Node::Value(_), Node::Value(_)) | (Node::Op(_), Node::Op(_))) {
                    out.push(Violation::NotBipartite { from, to });
                }
                edges_ok.push((from, to));
            }
            _ => out.push(Violation::DanglingEdge { from, to }),
        }
    }

    if let Some(cycle) = find_cycle(g.nodes.len(), &edges_ok) {
        out.push(Violation::Cycle { nodes: cycle });
    }

    let mut ins: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut outs: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(from, to) in &edges_ok {
        outs.entry(from).or_default().push(to);
        ins.entry(to).or_default().push(from);
    }

    for op in g.op_nodes() {
        let in_edges = ins.get(&op.id).map(Vec::as_slice).unwrap_or(&[]);
        let out_edges = outs.get(&op.id).map(Vec::as_slice).unwrap_or(&[]);
        let out_values = out_edges.iter().filter(|id| g.value(**id).is_some()).count();
        if in_edges.is_empty() {
            out.push(Violation::NoInputs { op: op.id });
        }
        if out_values != 1 {
            out.push(Violation::OutputCount { op: op.id, count: out_values });
        }
        let want: BTreeSet<NodeId> = op.inputs.iter().copied().collect();
        let have: BTreeSet<NodeId> = in_edges.iter().copied().collect();
        if want != have || out_edges != [op.output] {
            out.push(Violation::EdgeMismatch { op: op.id });
        }
        let level_ok = matches!(
            (g.level, op.kind),
            (GraphLevel::Fol, OpKind::Fol(_)) | (GraphLevel::Primitive, OpKind::Prim(_)) | (GraphLevel::Fused, OpKind::Fused)
        );
        if !level_ok {
            out.push(Violation::LevelMismatch { op: op.id, kind: op.kind.name().into() });
        }
        match g.functions.get(&op.id) {
            None => out.push(Violation::MissingFunction { op: op.id }),
            Some(f) => {
                if let Some(detail) = check_function(f, op.inputs.len()) {
                    out.push(Violation::BadFunction { op: op.id, detail });
                }
            }
        }
    }

    let answers = g.value_nodes().filter(|v| v.role == ValueRole::Answer).count();
    if answers != 1 {
        out.push(Violation::AnswerCount { count: answers });
    }
    ValidationReport { violations: out }
}

fn check_function(f: &super::FunctionSpec, arity: usize) -> Option<String> {
    if f.steps.is_empty() {
        return Some("empty step list".into());
    }
    for (i, step) in f.steps.iter().enumerate() {
        for operand in &step.inputs {
            match *operand {
                Operand::Input(k) if k >= arity => return Some(format!("step {i} reads missing input {k}")),
                Operand::Step(j) if j >= i => return Some(format!("step {i} reads later step {j}")),
                _ => {}
            }
        }
    }
    None
}

/// Kahn's algorithm with smallest-id-first tie breaking; returns the nodes
/// left over when a cycle blocks progress.
fn find_cycle(n: usize, edges: &[(NodeId, NodeId)]) -> Option<Vec<NodeId>> {
    let order = kahn(n, edges);
    if order.len() == n {
        return None;
    }
    let done: BTreeSet<NodeId> = order.into_iter().collect();
    Some((0..n).map(NodeId).filter(|id| !done.contains(id)).collect())
}

fn kahn(n: usize, edges: &[(NodeId, NodeId)]) -> Vec<NodeId> {
    let mut indeg = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a.0 < n && b.0 < n {
            succ[a.0].push(b.0);
            indeg[b.0] += 1;
        }
    }
    let mut heap: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = heap.pop() {
        order.push(NodeId(i));
        for &j in &succ[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                heap.push(Reverse(j));
            }
        }
    }
    order
}

/// Op ids in dependency order, ties broken by ascending id.
pub fn topo_order(g: &ComputationGraph) -> Result<Vec<NodeId>> {
    let order = kahn(g.nodes.len(), &g.edges);
    if order.len() != g.nodes.len() {
        return Err(Error::Cycle);
    }
    Ok(order.into_iter().filter(|id| g.op(*id).is_some()).collect())
}
