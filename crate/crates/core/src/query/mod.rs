//! Query shapes, grounded queries and their disjunctive normal form.

mod dnf;
mod gen;
mod io;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

pub use dnf::{to_dnf, Clause, DnfQuery, Literal, Term, VarRef};
pub use gen::{generate_queries, DEFAULT_RETRIES};
pub use io::{read_queries, write_queries, QueryRecord};

/// The fourteen benchmark query shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShapeTag {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2in")]
    In2,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
}

impl ShapeTag {
    /// Benchmark column order.
    pub const ALL: [ShapeTag; 14] = [
        ShapeTag::P1,
        ShapeTag::P2,
        ShapeTag::P3,
        ShapeTag::I2,
        ShapeTag::I3,
        ShapeTag::Pi,
        ShapeTag::Ip,
        ShapeTag::U2,
        ShapeTag::Up,
        ShapeTag::In2,
        ShapeTag::In3,
        ShapeTag::Inp,
        ShapeTag::Pin,
        ShapeTag::Pni,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeTag::P1 => "1p",
            ShapeTag::P2 => "2p",
            ShapeTag::P3 => "3p",
            ShapeTag::I2 => "2i",
            ShapeTag::I3 => "3i",
            ShapeTag::Pi => "pi",
            ShapeTag::Ip => "ip",
            ShapeTag::U2 => "2u",
            ShapeTag::Up => "up",
            ShapeTag::In2 => "2in",
            ShapeTag::In3 => "3in",
            ShapeTag::Inp => "inp",
            ShapeTag::Pin => "pin",
            ShapeTag::Pni => "pni",
        }
    }

    pub fn has_union(self) -> bool {
        matches!(self, ShapeTag::U2 | ShapeTag::Up)
    }

    pub fn has_negation(self) -> bool {
        matches!(
            self,
            ShapeTag::In2 | ShapeTag::In3 | ShapeTag::Inp | ShapeTag::Pin | ShapeTag::Pni
        )
    }
}

impl fmt::Display for ShapeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownTag {
                tag: s.to_string(),
                valid: ShapeTag::ALL.map(ShapeTag::as_str).join(", "),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Anchor,
    Bound,
    Answer,
}

/// How the incoming edges of a variable slot are joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combinator {
    None,
    Intersection,
    Union,
}

/// A relation edge between slots. The edge's position in
/// [`QueryStructure::edges`] is its relation slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub negated: bool,
}

/// Variable slots and relation edges of a query shape. Anchor slots come
/// first and slots are listed in topological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryStructure {
    pub tag: ShapeTag,
    pub slots: Vec<SlotKind>,
    pub edges: Vec<Edge>,
    pub combinators: Vec<Combinator>,
}

impl QueryStructure {
    pub fn num_anchors(&self) -> usize {
        self.slots.iter().filter(|k| **k == SlotKind::Anchor).count()
    }

    pub fn num_bound(&self) -> usize {
        self.slots.iter().filter(|k| **k == SlotKind::Bound).count()
    }

    pub fn answer_slot(&self) -> usize {
        self.slots
            .iter()
            .position(|k| *k == SlotKind::Answer)
            .expect("validated structure has an answer slot")
    }

    /// Indices of the edges entering `slot`, ascending.
    pub fn incoming(&self, slot: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.target == slot)
            .map(|(i, _)| i)
    }

    pub fn num_negated(&self) -> usize {
        self.edges.iter().filter(|e| e.negated).count()
    }

    /// Checks the shape invariants: anchors first, one answer slot, edges
    /// pointing forward, every non-answer slot feeding exactly one edge,
    /// combinators consistent with in-degree, and negation only under an
    /// intersection.
    pub fn validate(&self) -> Result<()> {
        let n = self.slots.len();
        let bad = |msg: String| Err(Error::Structure(format!("{}: {msg}", self.tag)));
        if self.combinators.len() != n {
            return bad("combinator list length differs from slot count".into());
        }
        let anchors = self.num_anchors();
        if anchors == 0 || self.slots[..anchors].iter().any(|k| *k != SlotKind::Anchor) {
            return bad("anchor slots must come first".into());
        }
        if self.slots.iter().filter(|k| **k == SlotKind::Answer).count() != 1 {
            return bad("exactly one answer slot required".into());
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.source >= n || e.target >= n || e.source >= e.target {
                return bad(format!("edge {i} does not point forward"));
            }
            if self.slots[e.target] == SlotKind::Anchor {
                return bad(format!("edge {i} enters an anchor"));
            }
        }
        for slot in 0..n {
            let indeg = self.incoming(slot).count();
            let outdeg = self.edges.iter().filter(|e| e.source == slot).count();
            let kind = self.slots[slot];
            if kind != SlotKind::Answer && outdeg != 1 {
                return bad(format!("slot {slot} must feed exactly one edge"));
            }
            if kind == SlotKind::Answer && outdeg != 0 {
                return bad("answer slot has outgoing edges".into());
            }
            match (kind, self.combinators[slot], indeg) {
                (SlotKind::Anchor, Combinator::None, 0) => {}
                (SlotKind::Anchor, _, _) => return bad(format!("anchor slot {slot} has a join or input")),
                (_, Combinator::None, 1) => {}
                (_, Combinator::Intersection | Combinator::Union, d) if d >= 2 => {}
                _ => return bad(format!("slot {slot}: combinator does not match in-degree {indeg}")),
            }
            if self.incoming(slot).any(|e| self.edges[e].negated)
                && self.combinators[slot] != Combinator::Intersection
            {
                return bad(format!("negated edge into slot {slot} outside an intersection"));
            }
        }
        Ok(())
    }
}

/// Canonical structure for a shape tag.
pub fn structure_of(tag: ShapeTag) -> QueryStructure {
    use Combinator::{Intersection as I, None as N, Union as U};
    use SlotKind::{Anchor as A, Answer as Q, Bound as B};
    let e = |source, target, negated| Edge { source, target, negated };
    let (slots, edges, combinators) = match tag {
        ShapeTag::P1 => (vec![A, Q], vec![e(0, 1, false)], vec![N, N]),
        ShapeTag::P2 => (vec![A, B, Q], vec![e(0, 1, false), e(1, 2, false)], vec![N; 3]),
        ShapeTag::P3 => (
            vec![A, B, B, Q],
            vec![e(0, 1, false), e(1, 2, false), e(2, 3, false)],
            vec![N; 4],
        ),
        ShapeTag::I2 => (vec![A, A, Q], vec![e(0, 2, false), e(1, 2, false)], vec![N, N, I]),
        ShapeTag::I3 => (
            vec![A, A, A, Q],
            vec![e(0, 3, false), e(1, 3, false), e(2, 3, false)],
            vec![N, N, N, I],
        ),
        ShapeTag::Pi => (
            vec![A, A, B, Q],
            vec![e(0, 2, false), e(2, 3, false), e(1, 3, false)],
            vec![N, N, N, I],
        ),
        ShapeTag::Ip => (
            vec![A, A, B, Q],
            vec![e(0, 2, false), e(1, 2, false), e(2, 3, false)],
            vec![N, N, I, N],
        ),
        ShapeTag::U2 => (vec![A, A, Q], vec![e(0, 2, false), e(1, 2, false)], vec![N, N, U]),
        ShapeTag::Up => (
            vec![A, A, B, Q],
            vec![e(0, 2, false), e(1, 2, false), e(2, 3, false)],
            vec![N, N, U, N],
        ),
        ShapeTag::In2 => (vec![A, A, Q], vec![e(0, 2, false), e(1, 2, true)], vec![N, N, I]),
        ShapeTag::In3 => (
            vec![A, A, A, Q],
            vec![e(0, 3, false), e(1, 3, false), e(2, 3, true)],
            vec![N, N, N, I],
        ),
        ShapeTag::Inp => (
            vec![A, A, B, Q],
            vec![e(0, 2, false), e(1, 2, true), e(2, 3, false)],
            vec![N, N, I, N],
        ),
        ShapeTag::Pin => (
            vec![A, A, B, Q],
            vec![e(0, 2, false), e(2, 3, false), e(1, 3, true)],
            vec![N, N, N, I],
        ),
        ShapeTag::Pni => (
            vec![A, A, B, Q],
            vec![e(0, 2, false), e(2, 3, true), e(1, 3, false)],
            vec![N, N, N, I],
        ),
    };
    QueryStructure {
        tag,
        slots,
        edges,
        combinators,
    }
}

/// Parses a tag and returns its canonical structure.
pub fn structure_of_str(tag: &str) -> Result<QueryStructure> {
    Ok(structure_of(tag.parse()?))
}

/// A query shape with concrete anchor entities and relations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundedQuery {
    pub structure: QueryStructure,
    /// One entity per anchor slot.
    pub anchors: Vec<EntityId>,
    /// One relation per edge.
    pub rels: Vec<RelationId>,
}

impl GroundedQuery {
    pub fn new(structure: QueryStructure, anchors: Vec<EntityId>, rels: Vec<RelationId>) -> Result<Self> {
        let q = GroundedQuery {
            structure,
            anchors,
            rels,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn tag(&self) -> ShapeTag {
        self.structure.tag
    }

    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        if self.anchors.len() != self.structure.num_anchors() {
            return Err(Error::Structure(format!(
                "{} expects {} anchors, got {}",
                self.tag(),
                self.structure.num_anchors(),
                self.anchors.len()
            )));
        }
        if self.rels.len() != self.structure.edges.len() {
            return Err(Error::Structure(format!(
                "{} expects {} relations, got {}",
                self.tag(),
                self.structure.edges.len(),
                self.rels.len()
            )));
        }
        Ok(())
    }

    /// Checks entity and relation indices against a graph.
    pub fn validate_for(&self, g: &KnowledgeGraph) -> Result<()> {
        self.validate()?;
        for &a in &self.anchors {
            if a as usize >= g.num_entities() {
                return Err(Error::Bounds {
                    what: "entity",
                    index: a as usize,
                    len: g.num_entities(),
                });
            }
        }
        for &r in &self.rels {
            if r as usize >= g.num_relations() {
                return Err(Error::Bounds {
                    what: "relation",
                    index: r as usize,
                    len: g.num_relations(),
                });
            }
        }
        Ok(())
    }
}
