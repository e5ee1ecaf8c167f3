use std::collections::BTreeMap;

use super::{ComputationGraph, FolKind, GraphLevel, NodeId, OpAttrs, OpKind, ValueDesc, ValueRole};
use crate::kg::{EntityId, RelationId};
use crate::query::{to_dnf, Combinator, DnfQuery, GroundedQuery, SlotKind, Term, VarRef};
use crate::error::Result;

/// Source of a relation edge in a conjunctive plan.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Src {
    Anchor(usize),
    Var(usize),
}

struct PlanEdge {
    source: Src,
    rel: RelationId,
    slot: usize,
    negated: bool,
}

struct PlanVar {
    incoming: Vec<PlanEdge>,
    join: Combinator,
    name: String,
}

/// Emits the plan's variables into `g`: per edge a project op (plus a not
/// op when negated), and one and/or op when a variable joins several edges.
/// Returns the value node of the last variable.
fn emit(
    g: &mut ComputationGraph,
    anchors: &BTreeMap<usize, NodeId>,
    vars: &[PlanVar],
    output_role: ValueRole,
) -> NodeId {
    let mut values: Vec<NodeId> = Vec::with_capacity(vars.len());
    for (i, var) in vars.iter().enumerate() {
        let last = i + 1 == vars.len();
        let joined = var.incoming.len() > 1;
        let var_role = if last { output_role } else { ValueRole::Bound };
        let mut branches = Vec::new();
        for e in &var.incoming {
            let src = match e.source {
                Src::Anchor(slot) => anchors[&slot],
                Src::Var(v) => values[v],
            };
            let attrs = OpAttrs {
                relation: Some(e.rel),
                rel_slot: Some(e.slot),
                eps: None,
            };
            let role = if joined || e.negated { ValueRole::Intermediate } else { var_role };
            let label = if joined || e.negated { format!("{}.r{}", var.name, e.slot) } else { var.name.clone() };
            let mut out = g.add_op(
                OpKind::Fol(FolKind::Project),
                attrs,
                vec![src],
                role,
                ValueDesc::embedding(),
                label,
            );
            if e.negated {
                let role = if joined { ValueRole::Intermediate } else { var_role };
                out = g.add_op(
                    OpKind::Fol(FolKind::Not),
                    OpAttrs::default(),
                    vec![out],
                    role,
                    ValueDesc::embedding(),
                    format!("{}.not{}", var.name, e.slot),
                );
            }
            branches.push(out);
        }
        let value = if joined {
            let kind = match var.join {
                Combinator::Union => FolKind::Or,
                _ => FolKind::And,
            };
            g.add_op(
                OpKind::Fol(kind),
                OpAttrs::default(),
                branches,
                var_role,
                ValueDesc::embedding(),
                var.name.clone(),
            )
        } else {
            branches[0]
        };
        values.push(value);
    }
    *values.last().expect("plan has at least one variable")
}

fn add_anchors(g: &mut ComputationGraph, anchors: impl IntoIterator<Item = (usize, EntityId)>) -> BTreeMap<usize, NodeId> {
    anchors
        .into_iter()
        .map(|(slot, entity)| {
            let id = g.add_value(ValueRole::Anchor, ValueDesc::embedding(), format!("e{slot}:{entity}"));
            g.value_mut(id).expect("just added").slot = Some(slot);
            (slot, id)
        })
        .collect()
}

/// Maps a grounded query onto a FOL-level computation graph: anchors and
/// variables become value nodes, each relation edge a `project` op, each
/// negated edge an extra `not` op, and each multi-edge join an `and`/`or`
/// op.
pub fn capture(q: &GroundedQuery) -> Result<ComputationGraph> {
    q.validate()?;
    let s = &q.structure;
    let mut g = ComputationGraph::new(GraphLevel::Fol);
    let anchors = add_anchors(&mut g, (0..s.num_anchors()).map(|i| (i, q.anchors[i])));

    // variable slots follow the anchors in topological order
    let var_index = |slot: usize| slot - s.num_anchors();
    let vars: Vec<PlanVar> = (s.num_anchors()..s.slots.len())
        .map(|slot| PlanVar {
            incoming: s
                .incoming(slot)
                .map(|e| {
                    let edge = s.edges[e];
                    PlanEdge {
                        source: if s.slots[edge.source] == SlotKind::Anchor {
                            Src::Anchor(edge.source)
                        } else {
                            Src::Var(var_index(edge.source))
                        },
                        rel: q.rels[e],
                        slot: e,
                        negated: edge.negated,
                    }
                })
                .collect(),
            join: s.combinators[slot],
            name: if s.slots[slot] == SlotKind::Answer { "v?".into() } else { format!("v{}", var_index(slot) + 1) },
        })
        .collect();
    emit(&mut g, &anchors, &vars, ValueRole::Answer);
    Ok(g)
}

/// Captures a DNF query: one conjunctive sub-graph per clause, joined by a
/// single `or` op when there is more than one clause.
pub fn capture_dnf(dnf: &DnfQuery) -> ComputationGraph {
    let mut g = ComputationGraph::new(GraphLevel::Fol);
    let mut anchor_slots = BTreeMap::new();
    for c in &dnf.clauses {
        for l in &c.literals {
            if let Term::Anchor { slot, entity } = l.source {
                anchor_slots.insert(slot, entity);
            }
        }
    }
    let anchors = add_anchors(&mut g, anchor_slots);
    let multi = dnf.clauses.len() > 1;
    let mut outputs = Vec::new();
    for (ci, clause) in dnf.clauses.iter().enumerate() {
        let order = clause.variables();
        let pos = |v: VarRef| order.iter().position(|x| *x == v).expect("variable is targeted");
        let vars: Vec<PlanVar> = order
            .iter()
            .map(|&v| PlanVar {
                incoming: clause
                    .literals
                    .iter()
                    .filter(|l| l.target == v)
                    .map(|l| PlanEdge {
                        source: match l.source {
                            Term::Anchor { slot, .. } => Src::Anchor(slot),
                            Term::Var(u) => Src::Var(pos(u)),
                        },
                        rel: l.rel,
                        slot: l.edge,
                        negated: l.negated,
                    })
                    .collect(),
                join: Combinator::Intersection,
                name: match (v, multi) {
                    (VarRef::Answer, false) => "v?".into(),
                    (VarRef::Answer, true) => format!("c{ci}.v?"),
                    (VarRef::Bound(b), _) => format!("c{ci}.v{}", b + 1),
                },
            })
            .collect();
        let role = if multi { ValueRole::Intermediate } else { ValueRole::Answer };
        outputs.push(emit(&mut g, &anchors, &vars, role));
    }
    if multi {
        g.add_op(
            OpKind::Fol(FolKind::Or),
            OpAttrs::default(),
            outputs,
            ValueRole::Answer,
            ValueDesc::embedding(),
            "v?",
        );
    }
    g
}

/// The executable FOL graph of a query: unions are distributed to the top
/// through the DNF, so union queries run one sub-graph per clause joined by
/// a final `or`. Queries without unions are captured directly.
pub fn lower(q: &GroundedQuery) -> Result<ComputationGraph> {
    if q.structure.combinators.contains(&Combinator::Union) {
        Ok(capture_dnf(&to_dnf(q)?))
    } else {
        capture(q)
    }
}
