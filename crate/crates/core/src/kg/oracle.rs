use std::collections::BTreeSet;

use super::{EntityId, KnowledgeGraph};
use crate::error::Result;
use crate::query::{Combinator, GroundedQuery, SlotKind};

pub type EntitySet = BTreeSet<EntityId>;

/// Exact answer set of `q` under set semantics: projection is the union of
/// neighbors over the frontier, joins are set intersection/union, and a
/// negated edge contributes the complement of its projected set to the
/// enclosing intersection.
pub fn answer_oracle(g: &KnowledgeGraph, q: &GroundedQuery) -> Result<EntitySet> {
    q.validate_for(g)?;
    let s = &q.structure;
    let universe = g.all_entities();
    let mut values: Vec<EntitySet> = vec![EntitySet::new(); s.slots.len()];
    // slots are stored in topological order
    for slot in 0..s.slots.len() {
        if s.slots[slot] == SlotKind::Anchor {
            values[slot] = EntitySet::from([q.anchors[slot]]);
            continue;
        }
        let mut acc: Option<EntitySet> = None;
        for e in s.incoming(slot) {
            let edge = s.edges[e];
            let mut set = g.project(&values[edge.source], q.rels[e])?;
            if edge.negated {
                set = universe.difference(&set).copied().collect();
            }
            acc = Some(match (acc, s.combinators[slot]) {
                (None, _) => set,
                (Some(prev), Combinator::Union) => prev.union(&set).copied().collect(),
                (Some(prev), _) => prev.intersection(&set).copied().collect(),
            });
        }
        values[slot] = acc.unwrap_or_default();
    }
    Ok(std::mem::take(&mut values[s.answer_slot()]))
}
