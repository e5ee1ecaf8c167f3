//! Bipartite computation-graph IR shared by the FOL, primitive and fused
//! levels.

mod capture;
mod dump;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kg::RelationId;

pub use capture::{capture, capture_dnf, lower};
pub use dump::{to_dot, to_json, GRAPH_SCHEMA_VERSION};
pub use validate::{topo_order, validate, ValidationReport, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphLevel {
    Fol,
    Primitive,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueRole {
    Anchor,
    Bound,
    Answer,
    Intermediate,
    Weight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemKind {
    F32,
    #[default]
    F64,
}

impl ElemKind {
    pub fn size(self) -> usize {
        match self {
            ElemKind::F32 => 4,
            ElemKind::F64 => 8,
        }
    }
}

/// Symbolic tensor dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    /// Number of queries in a dispatch.
    Batch,
    /// Relation axis of a per-relation weight table.
    Relations,
    /// Width of a flattened Beta embedding (`2d`).
    Embed,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueDesc {
    pub shape: Vec<Dim>,
    pub elem: ElemKind,
}

impl ValueDesc {
    pub fn embedding() -> Self {
        ValueDesc {
            shape: vec![Dim::Batch, Dim::Embed],
            elem: ElemKind::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FolKind {
    Project,
    And,
    Or,
    Not,
}

impl FolKind {
    pub const ALL: [FolKind; 4] = [FolKind::Project, FolKind::And, FolKind::Or, FolKind::Not];

    pub fn name(self) -> &'static str {
        match self {
            FolKind::Project => "project",
            FolKind::And => "and",
            FolKind::Or => "or",
            FolKind::Not => "not",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimKind {
    MatMul,
    Add,
    Relu,
    Softmax,
    Reciprocal,
    WeightedSum,
    ClampMin,
    /// Packs clause embeddings along a clause axis for union queries.
    Stack,
}

impl PrimKind {
    pub fn name(self) -> &'static str {
        match self {
            PrimKind::MatMul => "matmul",
            PrimKind::Add => "add",
            PrimKind::Relu => "relu",
            PrimKind::Softmax => "softmax",
            PrimKind::Reciprocal => "reciprocal",
            PrimKind::WeightedSum => "weighted_sum",
            PrimKind::ClampMin => "clamp_min",
            PrimKind::Stack => "stack",
        }
    }

    /// Elementwise kinds whose output may overwrite their first input.
    pub fn in_place(self) -> bool {
        matches!(self, PrimKind::Add | PrimKind::Relu | PrimKind::Reciprocal | PrimKind::ClampMin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "level", content = "kind")]
pub enum OpKind {
    Fol(FolKind),
    Prim(PrimKind),
    Fused,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Fol(k) => k.name(),
            OpKind::Prim(k) => k.name(),
            OpKind::Fused => "fused",
        }
    }

    pub fn prim(self) -> Option<PrimKind> {
        match self {
            OpKind::Prim(k) => Some(k),
            _ => None,
        }
    }

    pub fn fol(self) -> Option<FolKind> {
        match self {
            OpKind::Fol(k) => Some(k),
            _ => None,
        }
    }
}

/// Per-op attributes. `rel_slot` marks an op (or step) whose weight operand
/// is a per-relation table gathered row by row with the relations bound to
/// that query edge.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OpAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<RelationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_slot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNode {
    pub id: NodeId,
    pub role: ValueRole,
    pub desc: ValueDesc,
    pub label: String,
    /// Query slot an anchor value is bound from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: NodeId,
    pub kind: OpKind,
    pub attrs: OpAttrs,
    /// Ordered operands.
    pub inputs: Vec<NodeId>,
    pub output: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Value(ValueNode),
    Op(OpNode),
}

impl Node {
    pub fn id(&self) -> NodeId {
        match self {
            Node::Value(v) => v.id,
            Node::Op(o) => o.id,
        }
    }
}

/// Operand of a function step: an operand of the owning op, or the result
/// of an earlier step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operand {
    Input(usize),
    Step(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub kind: OpKind,
    pub inputs: Vec<Operand>,
    pub attrs: OpAttrs,
    /// Op node of the unfused graph this step came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<NodeId>,
}

/// Ordered step list computed by an op; the last step produces the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub steps: Vec<Step>,
}

impl FunctionSpec {
    pub fn single(kind: OpKind, arity: usize, attrs: OpAttrs) -> Self {
        FunctionSpec {
            steps: vec![Step {
                kind,
                inputs: (0..arity).map(Operand::Input).collect(),
                attrs,
                origin: None,
            }],
        }
    }
}

/// `G = (V, E, F)`: value and op nodes in one dense id space, directed
/// edges between them, and one function per op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationGraph {
    pub level: GraphLevel,
    pub nodes: Vec<Node>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub functions: BTreeMap<NodeId, FunctionSpec>,
}

impl ComputationGraph {
    pub fn new(level: GraphLevel) -> Self {
        ComputationGraph {
            level,
            nodes: Vec::new(),
            edges: Vec::new(),
            functions: BTreeMap::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0)
    }

    pub fn value(&self, id: NodeId) -> Option<&ValueNode> {
        match self.nodes.get(id.0) {
            Some(Node::Value(v)) => Some(v),
            _ => None,
        }
    }

    pub fn op(&self, id: NodeId) -> Option<&OpNode> {
        match self.nodes.get(id.0) {
            Some(Node::Op(o)) => Some(o),
            _ => None,
        }
    }

    pub fn value_nodes(&self) -> impl Iterator<Item = &ValueNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Value(v) => Some(v),
            _ => None,
        })
    }

    pub fn op_nodes(&self) -> impl Iterator<Item = &OpNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Op(o) => Some(o),
            _ => None,
        })
    }

    pub fn num_ops(&self) -> usize {
        self.op_nodes().count()
    }

    pub fn count_ops(&self, kind: OpKind) -> usize {
        self.op_nodes().filter(|o| o.kind == kind).count()
    }

    /// The value node with role `Answer`, if unique.
    pub fn answer(&self) -> Option<NodeId> {
        let mut it = self.value_nodes().filter(|v| v.role == ValueRole::Answer);
        match (it.next(), it.next()) {
            (Some(v), None) => Some(v.id),
            _ => None,
        }
    }

    /// Value nodes not produced by any op, ascending.
    pub fn external_inputs(&self) -> Vec<NodeId> {
        let produced: std::collections::BTreeSet<NodeId> = self.op_nodes().map(|o| o.output).collect();
        self.value_nodes()
            .map(|v| v.id)
            .filter(|id| !produced.contains(id))
            .collect()
    }

    /// Op producing `value`.
    pub fn producer(&self, value: NodeId) -> Option<&OpNode> {
        self.op_nodes().find(|o| o.output == value)
    }

    /// Ops consuming `value`, ascending.
    pub fn consumers(&self, value: NodeId) -> Vec<NodeId> {
        self.op_nodes().filter(|o| o.inputs.contains(&value)).map(|o| o.id).collect()
    }

    pub fn value_mut(&mut self, id: NodeId) -> Option<&mut ValueNode> {
        match self.nodes.get_mut(id.0) {
            Some(Node::Value(v)) => Some(v),
            _ => None,
        }
    }

    pub fn set_elem(&mut self, elem: ElemKind) {
        for n in &mut self.nodes {
            if let Node::Value(v) = n {
                v.desc.elem = elem;
            }
        }
    }

    pub fn add_value(&mut self, role: ValueRole, desc: ValueDesc, label: impl Into<String>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node::Value(ValueNode {
            id,
            role,
            desc,
            label: label.into(),
            slot: None,
        }));
        id
    }

    /// Adds an op over existing value nodes, wiring edges to a fresh output
    /// value node. Returns the output's id.
    pub fn add_op(
        &mut self,
        kind: OpKind,
        attrs: OpAttrs,
        inputs: Vec<NodeId>,
        out_role: ValueRole,
        out_desc: ValueDesc,
        out_label: impl Into<String>,
    ) -> NodeId {
        let function = FunctionSpec::single(kind, inputs.len(), attrs);
        self.add_op_with(kind, attrs, inputs, function, out_role, out_desc, out_label)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_op_with(
        &mut self,
        kind: OpKind,
        attrs: OpAttrs,
        inputs: Vec<NodeId>,
        function: FunctionSpec,
        out_role: ValueRole,
        out_desc: ValueDesc,
        out_label: impl Into<String>,
    ) -> NodeId {
        let op = NodeId(self.nodes.len());
        let output = NodeId(op.0 + 1);
        for &i in &inputs {
            self.edges.push((i, op));
        }
        self.edges.push((op, output));
        self.nodes.push(Node::Op(OpNode {
            id: op,
            kind,
            attrs,
            inputs,
            output,
        }));
        self.nodes.push(Node::Value(ValueNode {
            id: output,
            role: out_role,
            desc: out_desc,
            label: out_label.into(),
            slot: None,
        }));
        self.functions.insert(op, function);
        output
    }
}
