use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Combinator, GroundedQuery, SlotKind};
use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarRef {
    Bound(u32),
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Anchor { slot: usize, entity: EntityId },
    Var(VarRef),
}

/// `r(source, target)` or its negation. `edge` is the relation slot of the
/// originating query edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub rel: RelationId,
    pub edge: usize,
    pub source: Term,
    pub target: VarRef,
    pub negated: bool,
}

/// A conjunction of literals. Literals are ordered so that every variable
/// appears as a target before it is used as a source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub literals: Vec<Literal>,
}

impl Clause {
    /// Distinct variables targeted by the clause's literals, in first
    /// appearance order.
    pub fn variables(&self) -> Vec<VarRef> {
        let mut seen = Vec::new();
        for l in &self.literals {
            if !seen.contains(&l.target) {
                seen.push(l.target);
            }
        }
        seen
    }

    /// Set-semantics evaluation of the conjunction.
    pub fn evaluate(&self, g: &KnowledgeGraph) -> Result<BTreeSet<EntityId>> {
        let universe = g.all_entities();
        let mut values: BTreeMap<VarRef, BTreeSet<EntityId>> = BTreeMap::new();
        for var in self.variables() {
            let mut acc: Option<BTreeSet<EntityId>> = None;
            for l in self.literals.iter().filter(|l| l.target == var) {
                let frontier = match l.source {
                    Term::Anchor { entity, .. } => BTreeSet::from([entity]),
                    Term::Var(v) => values[&v].clone(),
                };
                let mut set = g.project(&frontier, l.rel)?;
                if l.negated {
                    set = universe.difference(&set).copied().collect();
                }
                acc = Some(match acc {
                    None => set,
                    Some(prev) => prev.intersection(&set).copied().collect(),
                });
            }
            values.insert(var, acc.unwrap_or_default());
        }
        Ok(values.remove(&VarRef::Answer).unwrap_or_default())
    }
}

/// `c_1 ∨ c_2 ∨ ... ∨ c_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnfQuery {
    pub clauses: Vec<Clause>,
}

impl DnfQuery {
    /// Union of the clause answers.
    pub fn evaluate(&self, g: &KnowledgeGraph) -> Result<BTreeSet<EntityId>> {
        let mut out = BTreeSet::new();
        for c in &self.clauses {
            out.extend(c.evaluate(g)?);
        }
        Ok(out)
    }
}

#[derive(Clone)]
struct Partial {
    lits: Vec<Literal>,
    out: Term,
}

/// Distributes unions outward so the query becomes a disjunction of
/// conjunctive clauses.
pub fn to_dnf(q: &GroundedQuery) -> Result<DnfQuery> {
    q.validate()?;
    let mut next_var = 0u32;
    let partials = expand_slot(q, q.structure.answer_slot(), &mut next_var);
    let clauses = partials
        .into_iter()
        .map(|p| {
            let Term::Var(answer) = p.out else {
                unreachable!("answer slot is a variable")
            };
            renumber(p.lits, answer)
        })
        .collect();
    Ok(DnfQuery { clauses })
}

fn expand_slot(q: &GroundedQuery, slot: usize, next_var: &mut u32) -> Vec<Partial> {
    let s = &q.structure;
    if s.slots[slot] == SlotKind::Anchor {
        return vec![Partial {
            lits: Vec::new(),
            out: Term::Anchor {
                slot,
                entity: q.anchors[slot],
            },
        }];
    }
    // per incoming edge: alternatives of the source, each paired with the edge
    let branches: Vec<(usize, Vec<Partial>)> = s
        .incoming(slot)
        .map(|e| (e, expand_slot(q, s.edges[e].source, next_var)))
        .collect();

    let mut fresh = || {
        let v = VarRef::Bound(*next_var);
        *next_var += 1;
        v
    };
    let lit = |e: usize, src: Term, target: VarRef| Literal {
        rel: q.rels[e],
        edge: e,
        source: src,
        target,
        negated: s.edges[e].negated,
    };

    match s.combinators[slot] {
        Combinator::Union => branches
            .iter()
            .flat_map(|(e, alts)| alts.iter().map(move |p| (*e, p)))
            .map(|(e, p)| {
                let v = fresh();
                let mut lits = p.lits.clone();
                lits.push(lit(e, p.out, v));
                Partial { lits, out: Term::Var(v) }
            })
            .collect(),
        Combinator::Intersection | Combinator::None => {
            // cartesian product over the branches' alternatives
            let mut combos: Vec<Vec<(usize, &Partial)>> = vec![Vec::new()];
            for (e, alts) in &branches {
                combos = combos
                    .into_iter()
                    .flat_map(|c| {
                        alts.iter().map(move |p| {
                            let mut c = c.clone();
                            c.push((*e, p));
                            c
                        })
                    })
                    .collect();
            }
            combos
                .into_iter()
                .map(|combo| {
                    let v = fresh();
                    let mut lits = Vec::new();
                    for (_, p) in &combo {
                        lits.extend(p.lits.iter().copied());
                    }
                    for (e, p) in &combo {
                        lits.push(lit(*e, p.out, v));
                    }
                    Partial { lits, out: Term::Var(v) }
                })
                .collect()
        }
    }
}

/// Dense per-clause variable numbering with the clause output as `Answer`.
fn renumber(lits: Vec<Literal>, answer: VarRef) -> Clause {
    let mut map: BTreeMap<VarRef, VarRef> = BTreeMap::new();
    map.insert(answer, VarRef::Answer);
    let mut next = 0;
    let mut rename = |v: VarRef, map: &mut BTreeMap<VarRef, VarRef>| {
        *map.entry(v).or_insert_with(|| {
            let r = VarRef::Bound(next);
            next += 1;
            r
        })
    };
    let literals = lits
        .into_iter()
        .map(|mut l| {
            l.target = rename(l.target, &mut map);
            if let Term::Var(v) = l.source {
                l.source = Term::Var(rename(v, &mut map));
            }
            l
        })
        .collect();
    Clause { literals }
}
