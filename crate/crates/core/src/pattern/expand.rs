use std::collections::BTreeMap;

use super::{Arg, ModularizedGraph, ModuleKind, TemplateLibrary};
use crate::error::{Error, Result};
use crate::ir::{
    topo_order, validate, ComputationGraph, Dim, ElemKind, GraphLevel, NodeId, OpAttrs, OpKind, ValueDesc, ValueRole,
};

/// Replaces every FOL op of `g` by an instance of its template. Boundary
/// values keep their role and label; weights become shared `Weight` value
/// nodes named after the template's weight spec.
pub fn expand(g: &ComputationGraph, lib: &TemplateLibrary) -> Result<ModularizedGraph> {
    if g.level != GraphLevel::Fol {
        return Err(Error::Usage(format!("expand needs a FOL-level graph, got {:?}", g.level)));
    }
    validate(g).into_result()?;
    let elem = g.value_nodes().next().map_or(ElemKind::default(), |v| v.desc.elem);

    let mut p = ComputationGraph::new(GraphLevel::Primitive);
    let mut map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for id in g.external_inputs() {
        let v = g.value(id).expect("external input is a value");
        let new = p.add_value(v.role, v.desc.clone(), v.label.clone());
        p.value_mut(new).expect("just added").slot = v.slot;
        map.insert(id, new);
    }

    let mut weights: BTreeMap<String, NodeId> = BTreeMap::new();
    let mut parts = Vec::new();
    for op_id in topo_order(g)? {
        let op = g.op(op_id).expect("topo order yields ops");
        let kind = op
            .kind
            .fol()
            .ok_or_else(|| Error::Usage(format!("op {op_id} is not a FOL op")))?;
        let t = lib.require(kind, op.inputs.len())?;
        let out = g.value(op.output).expect("op output is a value");
        let mut step_out: Vec<NodeId> = Vec::with_capacity(t.steps.len());
        let mut ops = Vec::with_capacity(t.steps.len());
        for (i, step) in t.steps.iter().enumerate() {
            let inputs: Vec<NodeId> = step
                .inputs
                .iter()
                .map(|a| match *a {
                    Arg::Input(k) => map[&op.inputs[k]],
                    Arg::Step(j) => step_out[j],
                    Arg::Weight(w) => {
                        let spec = &t.weights[w];
                        *weights.entry(spec.name.clone()).or_insert_with(|| {
                            let mut shape: Vec<Dim> = spec.shape.iter().map(|&n| Dim::Fixed(n)).collect();
                            if spec.per_relation {
                                shape[0] = Dim::Relations;
                            }
                            p.add_value(ValueRole::Weight, ValueDesc { shape, elem }, spec.name.clone())
                        })
                    }
                })
                .collect();
            let gathered = t.gathered(i);
            if gathered && op.attrs.rel_slot.is_none() {
                return Err(Error::Template(format!(
                    "{} step {i} reads a per-relation weight but op {op_id} has no relation",
                    kind.name()
                )));
            }
            let attrs = OpAttrs {
                relation: if gathered { op.attrs.relation } else { None },
                rel_slot: if gathered { op.attrs.rel_slot } else { None },
                eps: step.eps,
            };
            let last = i + 1 == t.steps.len();
            let (role, desc, label) = if last {
                (out.role, out.desc.clone(), out.label.clone())
            } else {
                (
                    ValueRole::Intermediate,
                    ValueDesc {
                        shape: step.out.clone(),
                        elem,
                    },
                    format!("{}.t{}", out.label, i + 1),
                )
            };
            let v = p.add_op(OpKind::Prim(step.kind), attrs, inputs, role, desc, label);
            ops.push(NodeId(v.0 - 1));
            step_out.push(v);
        }
        map.insert(op.output, *step_out.last().expect("templates have steps"));
        parts.push((ops, ModuleKind::from(kind)));
    }
    ModularizedGraph::from_partition(p, parts)
}
