//! Knowledge graph storage: entity/relation vocabularies, the triple set and
//! per-relation adjacency used by the brute-force answer oracle.

mod load;
mod oracle;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use load::{load_triples, write_dataset};
pub use oracle::{answer_oracle, EntitySet};

pub type EntityId = u32;
pub type RelationId = u32;

/// A `(head, relation, tail)` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Triple { head, rel, tail }
    }
}

/// Injective name <-> dense index mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from names listed in index order.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::default();
        for name in names {
            vocab.push(name.into())?;
        }
        Ok(vocab)
    }

    /// Names `prefix0`, `prefix1`, ...
    pub fn numbered(prefix: &str, len: usize) -> Self {
        Self::from_names((0..len).map(|i| format!("{prefix}{i}"))).expect("numbered names are unique")
    }

    fn push(&mut self, name: String) -> Result<u32> {
        if self.index.contains_key(&name) {
            return Err(Error::Integrity(format!("duplicate vocabulary name `{name}`")));
        }
        let id = self.names.len() as u32;
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Shape of a seeded random graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            entities: 100,
            relations: 20,
            triples: 2000,
            seed: 42,
        }
    }
}

type Adjacency = Vec<BTreeMap<EntityId, BTreeSet<EntityId>>>;

static EMPTY: BTreeSet<EntityId> = BTreeSet::new();

/// Immutable knowledge graph `(entities, relations, triples)`.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: BTreeSet<Triple>,
    forward: Adjacency,
    backward: Adjacency,
}

impl KnowledgeGraph {
    /// Builds a graph, collapsing duplicate triples.
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for t in triples {
            check(t.head as usize, entities.len(), "entity")?;
            check(t.tail as usize, entities.len(), "entity")?;
            check(t.rel as usize, relations.len(), "relation")?;
            set.insert(t);
        }
        let mut forward: Adjacency = vec![BTreeMap::new(); relations.len()];
        let mut backward: Adjacency = vec![BTreeMap::new(); relations.len()];
        for t in &set {
            forward[t.rel as usize].entry(t.head).or_default().insert(t.tail);
            backward[t.rel as usize].entry(t.tail).or_default().insert(t.head);
        }
        Ok(KnowledgeGraph {
            entities,
            relations,
            triples: set,
            forward,
            backward,
        })
    }

    /// Uniformly random triples (duplicates and self-loops rejected), with
    /// numbered vocabularies `e0..` and `r0..`.
    pub fn synthetic(spec: SyntheticSpec) -> Result<Self> {
        if spec.entities == 0 || spec.relations == 0 {
            return Err(Error::Integrity("synthetic graph needs entities and relations".into()));
        }
        let capacity = spec.entities * spec.entities.saturating_sub(1) * spec.relations;
        if spec.triples > capacity {
            return Err(Error::Integrity(format!(
                "cannot place {} distinct triples in a graph of capacity {capacity}",
                spec.triples
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut triples = BTreeSet::new();
        while triples.len() < spec.triples {
            let head = rng.gen_range(0..spec.entities) as EntityId;
            let tail = rng.gen_range(0..spec.entities) as EntityId;
            let rel = rng.gen_range(0..spec.relations) as RelationId;
            if head != tail {
                triples.insert(Triple::new(head, rel, tail));
            }
        }
        Self::new(
            Vocab::numbered("e", spec.entities),
            Vocab::numbered("r", spec.relations),
            triples,
        )
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> &BTreeSet<Triple> {
        &self.triples
    }

    pub fn contains(&self, head: EntityId, rel: RelationId, tail: EntityId) -> bool {
        self.triples.contains(&Triple::new(head, rel, tail))
    }

    /// Tails reachable from `source` over `rel`.
    pub fn neighbors(&self, source: EntityId, rel: RelationId) -> Result<&BTreeSet<EntityId>> {
        check(source as usize, self.num_entities(), "entity")?;
        check(rel as usize, self.num_relations(), "relation")?;
        Ok(self.forward[rel as usize].get(&source).unwrap_or(&EMPTY))
    }

    /// Heads with an edge `rel` into `target`.
    pub fn predecessors(&self, target: EntityId, rel: RelationId) -> Result<&BTreeSet<EntityId>> {
        check(target as usize, self.num_entities(), "entity")?;
        check(rel as usize, self.num_relations(), "relation")?;
        Ok(self.backward[rel as usize].get(&target).unwrap_or(&EMPTY))
    }

    /// Union of `neighbors(e, rel)` over the frontier.
    pub fn project(&self, frontier: &BTreeSet<EntityId>, rel: RelationId) -> Result<BTreeSet<EntityId>> {
        let mut out = BTreeSet::new();
        for &e in frontier {
            out.extend(self.neighbors(e, rel)?.iter().copied());
        }
        Ok(out)
    }

    /// Every `(rel, head)` pair with an edge into `target`, in ascending order.
    pub fn incoming(&self, target: EntityId) -> Vec<(RelationId, EntityId)> {
        let mut out = Vec::new();
        for (rel, map) in self.backward.iter().enumerate() {
            if let Some(heads) = map.get(&target) {
                out.extend(heads.iter().map(|&h| (rel as RelationId, h)));
            }
        }
        out
    }

    /// Heads with at least one outgoing `rel` edge.
    pub fn heads_of(&self, rel: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        self.forward
            .get(rel as usize)
            .into_iter()
            .flat_map(|m| m.keys().copied())
    }

    pub fn all_entities(&self) -> BTreeSet<EntityId> {
        (0..self.num_entities() as EntityId).collect()
    }
}

fn check(index: usize, len: usize, what: &'static str) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::Bounds { what, index, len })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(triples: &[(u32, u32, u32)]) -> KnowledgeGraph {
        KnowledgeGraph::new(
            Vocab::numbered("e", 4),
            Vocab::numbered("r", 2),
            triples.iter().map(|&(h, r, t)| Triple::new(h, r, t)),
        )
        .unwrap()
    }

    #[test]
    fn neighbors_lookup() {
        let g = tiny(&[(0, 0, 1), (0, 0, 2)]);
        assert_eq!(g.neighbors(0, 0).unwrap(), &BTreeSet::from([1, 2]));
        assert!(g.neighbors(3, 0).unwrap().is_empty());
        assert!(g.neighbors(0, 1).unwrap().is_empty());

        let g = tiny(&[(0, 0, 1), (1, 0, 2)]);
        assert_eq!(g.neighbors(1, 0).unwrap(), &BTreeSet::from([2]));
    }

    #[test]
    fn neighbors_out_of_range() {
        let g = tiny(&[(0, 0, 1)]);
        assert!(matches!(g.neighbors(4, 0), Err(Error::Bounds { what: "entity", .. })));
        assert!(matches!(g.neighbors(0, 2), Err(Error::Bounds { what: "relation", .. })));
    }

    #[test]
    fn duplicate_triples_collapse() {
        let g = tiny(&[(0, 0, 1), (0, 0, 1)]);
        assert_eq!(g.triples().len(), 1);
    }

    #[test]
    fn rejects_out_of_range_triples() {
        let err = KnowledgeGraph::new(Vocab::numbered("e", 2), Vocab::numbered("r", 1), [Triple::new(0, 0, 5)]);
        assert!(err.is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(Vocab::from_names(["a", "b", "a"]).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = KnowledgeGraph::synthetic(spec).unwrap();
        let b = KnowledgeGraph::synthetic(spec).unwrap();
        assert_eq!(a.triples(), b.triples());
        assert_eq!(a.triples().len(), 2000);
        assert_eq!(a.num_entities(), 100);
        assert_eq!(a.num_relations(), 20);
    }

    #[test]
    fn adjacency_matches_triples() {
        let g = KnowledgeGraph::synthetic(SyntheticSpec { triples: 300, ..Default::default() }).unwrap();
        let mut rebuilt = BTreeSet::new();
        for r in 0..g.num_relations() as u32 {
            for h in 0..g.num_entities() as u32 {
                for &t in g.neighbors(h, r).unwrap() {
                    rebuilt.insert(Triple::new(h, r, t));
                    assert!(g.predecessors(t, r).unwrap().contains(&h));
                }
            }
        }
        assert_eq!(&rebuilt, g.triples());
    }
}
