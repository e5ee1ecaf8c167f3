use std::collections::{BTreeMap, BTreeSet};

use super::{Arg, ModularizedGraph, ModuleKind, PatternTemplate, TemplateLibrary};
use crate::error::{Error, Result};
use crate::ir::{topo_order, validate, ComputationGraph, GraphLevel, NodeId, OpKind, ValueRole};

struct Index<'a> {
    g: &'a ComputationGraph,
    producer: BTreeMap<NodeId, NodeId>,
    consumers: BTreeMap<NodeId, Vec<NodeId>>,
}

struct Matcher<'a, 'b> {
    ix: &'b Index<'a>,
    t: &'b PatternTemplate,
    taken: &'b BTreeSet<NodeId>,
    step_op: Vec<Option<NodeId>>,
    input_val: Vec<Option<NodeId>>,
    weight_val: Vec<Option<NodeId>>,
    rel_slot: Option<usize>,
}

fn bind(slot: &mut Option<NodeId>, v: NodeId) -> bool {
    match slot {
        Some(x) => *x == v,
        None => {
            *slot = Some(v);
            true
        }
    }
}

impl Matcher<'_, '_> {
    fn step(&mut self, j: usize, op_id: NodeId) -> bool {
        if let Some(bound) = self.step_op[j] {
            return bound == op_id;
        }
        if self.taken.contains(&op_id) || self.step_op.contains(&Some(op_id)) {
            return false;
        }
        let Some(op) = self.ix.g.op(op_id) else { return false };
        let spec = &self.t.steps[j];
        if op.kind != OpKind::Prim(spec.kind) || op.inputs.len() != spec.inputs.len() || op.attrs.eps != spec.eps {
            return false;
        }
        let gathered = self.t.gathered(j);
        if gathered != op.attrs.rel_slot.is_some() {
            return false;
        }
        if let Some(r) = op.attrs.rel_slot {
            match self.rel_slot {
                Some(prev) if prev != r => return false,
                _ => self.rel_slot = Some(r),
            }
        }
        self.step_op[j] = Some(op_id);
        for (arg, &v) in spec.inputs.iter().zip(&op.inputs) {
            let ok = match *arg {
                Arg::Input(k) => bind(&mut self.input_val[k], v),
                Arg::Weight(w) => {
                    let named = self
                        .ix
                        .g
                        .value(v)
                        .is_some_and(|n| n.role == ValueRole::Weight && n.label == self.t.weights[w].name);
                    named && bind(&mut self.weight_val[w], v)
                }
                Arg::Step(i) => match self.ix.producer.get(&v) {
                    Some(&p) => self.step(i, p),
                    None => false,
                },
            };
            if !ok {
                return false;
            }
        }
        true
    }

    /// Matches the template with its terminal step at `anchor`; returns the
    /// op of each step.
    fn run(mut self, anchor: NodeId) -> Option<Vec<NodeId>> {
        let last = self.t.steps.len() - 1;
        if !self.step(last, anchor) {
            return None;
        }
        let ops: Vec<NodeId> = self.step_op.iter().copied().collect::<Option<_>>()?;
        if self.input_val.iter().any(Option::is_none) {
            return None;
        }
        let inside: BTreeSet<NodeId> = ops.iter().copied().collect();
        // intermediate results may not escape the module
        for &op in &ops[..last] {
            let out = self.ix.g.op(op)?.output;
            let escapes = self
                .ix
                .consumers
                .get(&out)
                .is_some_and(|cs| cs.iter().any(|c| !inside.contains(c)));
            if escapes || self.ix.g.value(out)?.role == ValueRole::Answer {
                return None;
            }
        }
        // module inputs come from outside
        for v in self.input_val.iter().flatten() {
            if self.ix.producer.get(v).is_some_and(|p| inside.contains(p)) {
                return None;
            }
        }
        Some(ops)
    }
}

/// Partitions a primitive graph into operator modules by greedy template
/// matching. Ops left uncovered become singleton `opaque` modules.
pub fn recognize(g: &ComputationGraph, lib: &TemplateLibrary) -> Result<ModularizedGraph> {
    if g.level != GraphLevel::Primitive {
        return Err(Error::Usage(format!("recognize needs a primitive-level graph, got {:?}", g.level)));
    }
    validate(g).into_result()?;
    let order = topo_order(g)?;
    let mut ix = Index {
        g,
        producer: BTreeMap::new(),
        consumers: BTreeMap::new(),
    };
    for op in g.op_nodes() {
        ix.producer.insert(op.output, op.id);
        for &v in &op.inputs {
            ix.consumers.entry(v).or_default().push(op.id);
        }
    }

    let mut taken: BTreeSet<NodeId> = BTreeSet::new();
    let mut parts = Vec::new();
    for t in lib.by_priority() {
        let Some(terminal) = t.terminal() else { continue };
        for &op in &order {
            if taken.contains(&op) || g.op(op).map(|o| o.kind) != Some(OpKind::Prim(terminal)) {
                continue;
            }
            let m = Matcher {
                ix: &ix,
                t,
                taken: &taken,
                step_op: vec![None; t.steps.len()],
                input_val: vec![None; t.arity],
                weight_val: vec![None; t.weights.len()],
                rel_slot: None,
            };
            if let Some(ops) = m.run(op) {
                taken.extend(ops.iter().copied());
                parts.push((ops, ModuleKind::from(t.fol_kind)));
            }
        }
    }
    for &op in &order {
        if !taken.contains(&op) {
            parts.push((vec![op], ModuleKind::Opaque));
        }
    }
    ModularizedGraph::from_partition(g.clone(), parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beta::{init_model, templates};
    use crate::ir::{lower, Dim, FolKind, OpAttrs, PrimKind, ValueDesc};
    use crate::kg::{KnowledgeGraph, SyntheticSpec};
    use crate::pattern::{expand, TemplateStep, WeightSpec};
    use crate::query::{generate_queries, ShapeTag};

    fn lib() -> TemplateLibrary {
        let g = KnowledgeGraph::synthetic(SyntheticSpec::default()).unwrap();
        templates(&init_model(&g, 4, 8, 1))
    }

    /// Projection as the bare nine-step MLP with shared weights.
    fn nine_step() -> PatternTemplate {
        let row = |n| vec![Dim::Batch, Dim::Fixed(n)];
        let names = ["w1", "b1", "w2", "b2", "w3", "b3"];
        let shapes = [vec![4, 8], vec![8], vec![8, 8], vec![8], vec![8, 4], vec![4]];
        let weights = names
            .iter()
            .zip(shapes)
            .map(|(n, shape)| WeightSpec {
                name: n.to_string(),
                shape,
                per_relation: false,
            })
            .collect();
        let mut steps = Vec::new();
        let mut prev = Arg::Input(0);
        for layer in 0..3 {
            let width = if layer == 2 { 4 } else { 8 };
            steps.push(TemplateStep::new(PrimKind::MatMul, vec![prev, Arg::Weight(2 * layer)], row(width)));
            steps.push(TemplateStep::new(
                PrimKind::Add,
                vec![Arg::Step(steps.len() - 1), Arg::Weight(2 * layer + 1)],
                row(width),
            ));
            let kind = if layer == 2 { PrimKind::Softmax } else { PrimKind::Relu };
            steps.push(TemplateStep::new(kind, vec![Arg::Step(steps.len() - 1)], row(width)));
            prev = Arg::Step(steps.len() - 1);
        }
        PatternTemplate {
            fol_kind: FolKind::Project,
            arity: 1,
            steps,
            weights,
        }
    }

    #[test]
    fn literal_mlp_sequence_is_one_projection() {
        let mut lib = TemplateLibrary::new();
        lib.register(nine_step()).unwrap();
        assert_eq!(lib.steps(FolKind::Project), Some(9));

        let mut g = ComputationGraph::new(GraphLevel::Primitive);
        let desc = |n| ValueDesc {
            shape: vec![Dim::Batch, Dim::Fixed(n)],
            elem: Default::default(),
        };
        let s = g.add_value(ValueRole::Anchor, desc(4), "S");
        let w: Vec<NodeId> = ["w1", "b1", "w2", "b2", "w3", "b3"]
            .iter()
            .map(|n| g.add_value(ValueRole::Weight, desc(8), *n))
            .collect();
        let mut x = s;
        for layer in 0..3 {
            let role = ValueRole::Intermediate;
            x = g.add_op(OpKind::Prim(PrimKind::MatMul), OpAttrs::default(), vec![x, w[2 * layer]], role, desc(8), "t");
            x = g.add_op(OpKind::Prim(PrimKind::Add), OpAttrs::default(), vec![x, w[2 * layer + 1]], role, desc(8), "t");
            let (kind, role) = if layer == 2 {
                (PrimKind::Softmax, ValueRole::Answer)
            } else {
                (PrimKind::Relu, ValueRole::Intermediate)
            };
            x = g.add_op(OpKind::Prim(kind), OpAttrs::default(), vec![x], role, desc(8), "t");
        }
        let m = recognize(&g, &lib).unwrap();
        assert_eq!(m.num_modules(), 1);
        let id = m.module_ids()[0];
        assert_eq!(m.kind(id), Some(ModuleKind::Project));
        assert_eq!(m.members(id).len(), 9);
    }

    #[test]
    fn lone_add_is_opaque() {
        let mut g = ComputationGraph::new(GraphLevel::Primitive);
        let a = g.add_value(ValueRole::Anchor, ValueDesc::embedding(), "a");
        let b = g.add_value(ValueRole::Anchor, ValueDesc::embedding(), "b");
        g.add_op(
            OpKind::Prim(PrimKind::Add),
            OpAttrs::default(),
            vec![a, b],
            ValueRole::Answer,
            ValueDesc::embedding(),
            "y",
        );
        let m = recognize(&g, &lib()).unwrap();
        assert_eq!(m.num_modules(), 1);
        assert_eq!(m.kind(m.module_ids()[0]), Some(ModuleKind::Opaque));
    }

    #[test]
    fn round_trips_expand_and_is_idempotent() {
        let kg = KnowledgeGraph::synthetic(SyntheticSpec::default()).unwrap();
        let lib = lib();
        for tag in ShapeTag::ALL {
            for q in generate_queries(&kg, tag, 5, 3).unwrap() {
                let m = expand(&lower(&q).unwrap(), &lib).unwrap();
                let r = recognize(&m.graph, &lib).unwrap();
                assert_eq!(r.modules, m.modules, "{tag}");
                assert_eq!(r.module_dag, m.module_dag, "{tag}");
                let again = recognize(&r.graph, &lib).unwrap();
                assert_eq!(again.modules, r.modules, "{tag}");
            }
        }
    }
}
