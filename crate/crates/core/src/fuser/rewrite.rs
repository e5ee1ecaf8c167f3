use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Dag, FusionGroup, FusionStrategy};
use crate::error::{Error, Result};
use crate::ir::{
    topo_order, validate, ComputationGraph, FunctionSpec, GraphLevel, NodeId, OpAttrs, OpKind, Operand, Step,
};
use crate::pattern::{ModularizedGraph, ModuleId};

/// One fused op of the rewritten graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedOpInfo {
    /// Op id in the fused graph.
    pub op: NodeId,
    pub members: Vec<ModuleId>,
    pub strategy: FusionStrategy,
    pub absorbed: bool,
    pub steps: usize,
    /// Boundary edges of the group in the primitive graph.
    pub boundary: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub primitive_ops: usize,
    pub fused_ops: usize,
    pub strategies: BTreeMap<ModuleId, FusionStrategy>,
    pub groups: Vec<FusedOpInfo>,
    /// How hybrid groups treat neighbouring groups.
    pub hybrid_policy: String,
}

/// Rewrites each group into one fused op whose function is the group's
/// primitive ops in dependency order.
pub fn fuse(m: &ModularizedGraph, groups: &[FusionGroup]) -> Result<ComputationGraph> {
    fuse_with_report(m, groups, &BTreeMap::new()).map(|(g, _)| g)
}

pub fn fuse_with_report(
    m: &ModularizedGraph,
    groups: &[FusionGroup],
    strategies: &BTreeMap<ModuleId, FusionStrategy>,
) -> Result<(ComputationGraph, FusionReport)> {
    let g = &m.graph;
    let modules = m.module_ids();
    let mut owner: BTreeMap<ModuleId, usize> = BTreeMap::new();
    for (gi, grp) in groups.iter().enumerate() {
        if grp.members.is_empty() {
            return Err(Error::Fusion(format!("group {gi} is empty")));
        }
        for mid in &grp.members {
            if owner.insert(*mid, gi).is_some() {
                return Err(Error::Fusion(format!("module {mid} is in two groups")));
            }
        }
    }
    if owner.len() != modules.len() || modules.iter().any(|mid| !owner.contains_key(mid)) {
        return Err(Error::Fusion("groups do not partition the modules".into()));
    }
    let dag = Dag::new(m);
    for (gi, grp) in groups.iter().enumerate() {
        let set: BTreeSet<ModuleId> = grp.members.iter().copied().collect();
        if !dag.convex(&set) {
            return Err(Error::Fusion(format!("group {gi} is not convex")));
        }
    }

    let order = topo_order(g)?;
    let group_of_op = |op: NodeId| owner[&m.module_of(op).expect("op has a module")];
    let mut ops_of: Vec<Vec<NodeId>> = vec![Vec::new(); groups.len()];
    for &op in &order {
        ops_of[group_of_op(op)].push(op);
    }
    let producer: BTreeMap<NodeId, NodeId> = g.op_nodes().map(|o| (o.output, o.id)).collect();
    let mut consumers: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for op in g.op_nodes() {
        for v in &op.inputs {
            consumers.entry(*v).or_default().push(op.id);
        }
    }

    // boundary values per group
    let mut inputs_of: Vec<Vec<NodeId>> = Vec::with_capacity(groups.len());
    let mut output_of: Vec<NodeId> = Vec::with_capacity(groups.len());
    for (gi, ops) in ops_of.iter().enumerate() {
        let inside: BTreeSet<NodeId> = ops.iter().copied().collect();
        let mut ins = BTreeSet::new();
        let mut outs = Vec::new();
        for &op in ops {
            let o = g.op(op).expect("op");
            for v in &o.inputs {
                if !producer.get(v).is_some_and(|p| inside.contains(p)) {
                    ins.insert(*v);
                }
            }
            let cs = consumers.get(&o.output).map(Vec::as_slice).unwrap_or(&[]);
            if cs.is_empty() || cs.iter().any(|c| !inside.contains(c)) {
                outs.push(o.output);
            }
        }
        if outs.len() != 1 {
            return Err(Error::Fusion(format!("group {gi} has {} boundary outputs", outs.len())));
        }
        let last = *ops.last().expect("nonempty group");
        if g.op(last).expect("op").output != outs[0] {
            return Err(Error::Integrity(format!("group {gi} output is not produced by its last op")));
        }
        inputs_of.push(ins.into_iter().collect());
        output_of.push(outs[0]);
    }

    // groups in dependency order, ties by position
    let mut gdeps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); groups.len()];
    for (gi, ins) in inputs_of.iter().enumerate() {
        for v in ins {
            if let Some(p) = producer.get(v) {
                gdeps[gi].insert(group_of_op(*p));
            }
        }
    }
    let mut done = vec![false; groups.len()];
    let mut gorder = Vec::with_capacity(groups.len());
    while gorder.len() < groups.len() {
        let next = (0..groups.len())
            .find(|&gi| !done[gi] && gdeps[gi].iter().all(|d| done[*d]))
            .ok_or(Error::Cycle)?;
        done[next] = true;
        gorder.push(next);
    }

    let mut f = ComputationGraph::new(GraphLevel::Fused);
    let mut map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for id in g.external_inputs() {
        let v = g.value(id).expect("value");
        let new = f.add_value(v.role, v.desc.clone(), v.label.clone());
        f.value_mut(new).expect("just added").slot = v.slot;
        map.insert(id, new);
    }
    let mut infos = Vec::with_capacity(groups.len());
    for gi in gorder {
        let ops = &ops_of[gi];
        let ins = &inputs_of[gi];
        let pos: BTreeMap<NodeId, usize> = ops.iter().enumerate().map(|(i, op)| (g.op(*op).expect("op").output, i)).collect();
        let mut steps = Vec::with_capacity(ops.len());
        let mut boundary = Vec::new();
        for &op in ops {
            let o = g.op(op).expect("op");
            let operands = o
                .inputs
                .iter()
                .map(|v| match pos.get(v) {
                    Some(&j) => Operand::Step(j),
                    None => {
                        boundary.push((*v, op));
                        Operand::Input(ins.binary_search(v).expect("boundary input listed"))
                    }
                })
                .collect();
            steps.push(Step {
                kind: o.kind,
                inputs: operands,
                attrs: o.attrs,
                origin: Some(op),
            });
        }
        let out = g.value(output_of[gi]).expect("value");
        boundary.push((*ops.last().expect("nonempty"), output_of[gi]));
        let fused_inputs: Vec<NodeId> = ins
            .iter()
            .map(|v| map.get(v).copied().ok_or_else(|| Error::Integrity(format!("dangling boundary value {v}"))))
            .collect::<Result<_>>()?;
        let nsteps = steps.len();
        let new_out = f.add_op_with(
            OpKind::Fused,
            OpAttrs::default(),
            fused_inputs,
            FunctionSpec { steps },
            out.role,
            out.desc.clone(),
            out.label.clone(),
        );
        map.insert(output_of[gi], new_out);
        let grp = &groups[gi];
        infos.push(FusedOpInfo {
            op: NodeId(new_out.0 - 1),
            members: grp.members.clone(),
            strategy: grp.strategy,
            absorbed: grp.absorbed,
            steps: nsteps,
            boundary,
        });
    }
    validate(&f).into_result()?;
    let report = FusionReport {
        primitive_ops: g.num_ops(),
        fused_ops: f.num_ops(),
        strategies: strategies.clone(),
        groups: infos,
        hybrid_policy: "hybrid groups absorb adjacent groups while the union stays convex with one output".into(),
    };
    Ok((f, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beta::{init_model, templates};
    use crate::fuser::{collect_groups, determine_strategies};
    use crate::ir::lower;
    use crate::kg::{KnowledgeGraph, SyntheticSpec};
    use crate::pattern::expand;
    use crate::query::{structure_of, GroundedQuery, ShapeTag};

    fn modular(tag: ShapeTag) -> ModularizedGraph {
        let g = KnowledgeGraph::synthetic(SyntheticSpec::default()).unwrap();
        let lib = templates(&init_model(&g, 2, 4, 1));
        let s = structure_of(tag);
        let q = GroundedQuery::new(s.clone(), (0..s.num_anchors() as u32).collect(), vec![0; s.edges.len()]).unwrap();
        expand(&lower(&q).unwrap(), &lib).unwrap()
    }

    #[test]
    fn single_fused_op_per_shape() {
        for (tag, steps) in [(ShapeTag::P2, 20), (ShapeTag::I2, 32), (ShapeTag::Up, 41)] {
            let m = modular(tag);
            let s = determine_strategies(&m);
            let groups = collect_groups(&m, &s);
            let (f, report) = fuse_with_report(&m, &groups, &s).unwrap();
            assert_eq!(f.num_ops(), 1, "{tag}");
            assert_eq!(report.groups[0].steps, steps, "{tag}");
            assert_eq!(f.functions.values().next().unwrap().steps.len(), steps);
        }
    }

    #[test]
    fn singleton_groups_still_fuse() {
        let m = modular(ShapeTag::P3);
        let groups: Vec<FusionGroup> = m
            .module_ids()
            .into_iter()
            .map(|mid| FusionGroup {
                members: vec![mid],
                strategy: FusionStrategy::Horizontal,
                inputs: vec![],
                outputs: vec![],
                absorbed: false,
            })
            .collect();
        let f = fuse(&m, &groups).unwrap();
        assert_eq!(f.num_ops(), 3);
        assert!(validate(&f).is_empty());
    }

    #[test]
    fn non_convex_group_rejected() {
        let m = modular(ShapeTag::P3);
        let ids = m.module_ids();
        let mk = |members: Vec<ModuleId>| FusionGroup {
            members,
            strategy: FusionStrategy::Horizontal,
            inputs: vec![],
            outputs: vec![],
            absorbed: false,
        };
        let groups = vec![mk(vec![ids[0], ids[2]]), mk(vec![ids[1]])];
        assert!(matches!(fuse(&m, &groups), Err(Error::Fusion(_))));
        let partial = vec![mk(vec![ids[0]])];
        assert!(matches!(fuse(&m, &partial), Err(Error::Fusion(_))));
    }
}
