//! End-to-end compilation of a query shape and binding of query batches.

use std::collections::BTreeMap;

use crate::beta::{BetaEmbedding, ModelParams};
use crate::error::{Error, Result};
use crate::exec::{Bindings, Element, ExecMode, Tensor};
use crate::fuser::{collect_groups, determine_strategies, fuse_with_report, FusionGroup, FusionReport, FusionStrategy};
use crate::ir::{lower, ComputationGraph, ElemKind, NodeId, ValueRole};
use crate::kg::RelationId;
use crate::pattern::{expand, ModularizedGraph, ModuleId, TemplateLibrary};
use crate::query::{GroundedQuery, ShapeTag};

/// Every stage of compiling one query shape.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub tag: ShapeTag,
    pub fol: ComputationGraph,
    pub modular: ModularizedGraph,
    pub strategies: BTreeMap<ModuleId, FusionStrategy>,
    pub groups: Vec<FusionGroup>,
    pub fused: ComputationGraph,
    pub report: FusionReport,
}

impl Compiled {
    pub fn graph(&self, mode: ExecMode) -> &ComputationGraph {
        match mode {
            ExecMode::Unfused => &self.modular.graph,
            ExecMode::Fused => &self.fused,
        }
    }
}

/// Lowers `q` to FOL level, expands it with `lib` and fuses the result.
/// The graphs depend only on the query's shape; anchors and relations are
/// supplied per batch row at execution time.
pub fn compile(q: &GroundedQuery, lib: &TemplateLibrary, elem: ElemKind) -> Result<Compiled> {
    let mut fol = lower(q)?;
    fol.set_elem(elem);
    let modular = expand(&fol, lib)?;
    let strategies = determine_strategies(&modular);
    let groups = collect_groups(&modular, &strategies);
    let (fused, report) = fuse_with_report(&modular, &groups, &strategies)?;
    Ok(Compiled {
        tag: q.tag(),
        fol,
        modular,
        strategies,
        groups,
        fused,
        report,
    })
}

/// Model parameters converted once to the engine's element type.
#[derive(Debug, Clone)]
pub struct ParamTensors<T> {
    pub d: usize,
    pub entities: Tensor<T>,
    pub weights: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ParamTensors<T> {
    pub fn new(p: &ModelParams) -> Result<Self> {
        let mut weights = BTreeMap::new();
        for w in p.weights() {
            weights.insert(w.name.to_string(), Tensor::from_f64(w.shape.clone(), w.data)?);
        }
        Ok(ParamTensors {
            d: p.d,
            entities: Tensor::from_f64(vec![p.num_entities, 2 * p.d], &p.entities)?,
            weights,
        })
    }
}

/// Per-batch inputs: one anchor tensor per anchor slot and the relations
/// of every edge slot.
#[derive(Debug, Clone)]
pub struct BatchInputs<T> {
    pub batch: usize,
    pub anchors: BTreeMap<usize, Tensor<T>>,
    pub rels: BTreeMap<usize, Vec<RelationId>>,
}

impl<T: Element> BatchInputs<T> {
    /// Gathers anchor embeddings for a batch of same-shape queries.
    pub fn new(params: &ParamTensors<T>, queries: &[GroundedQuery]) -> Result<Self> {
        let Some(first) = queries.first() else {
            return Err(Error::Usage("empty query batch".into()));
        };
        let tag = first.tag();
        if let Some(q) = queries.iter().find(|q| q.tag() != tag) {
            return Err(Error::Usage(format!("batch mixes shapes {tag} and {}", q.tag())));
        }
        let width = 2 * params.d;
        let n = params.entities.shape()[0];
        let mut anchors = BTreeMap::new();
        for slot in 0..first.anchors.len() {
            let mut data = Vec::with_capacity(queries.len() * width);
            for q in queries {
                let e = q.anchors[slot] as usize;
                if e >= n {
                    return Err(Error::Bounds {
                        what: "entity",
                        index: e,
                        len: n,
                    });
                }
                data.extend_from_slice(params.entities.row(e));
            }
            anchors.insert(slot, Tensor::new(vec![queries.len(), width], data)?);
        }
        let rels = (0..first.rels.len())
            .map(|s| (s, queries.iter().map(|q| q.rels[s]).collect()))
            .collect();
        Ok(BatchInputs {
            batch: queries.len(),
            anchors,
            rels,
        })
    }

    /// Binds every external value of `g`: anchors by slot, weights by name.
    pub fn bindings<'a>(&'a self, g: &ComputationGraph, params: &'a ParamTensors<T>) -> Result<Bindings<'a, T>> {
        let mut values = BTreeMap::new();
        for id in g.external_inputs() {
            let v = g.value(id).expect("external input is a value");
            let t = match v.role {
                ValueRole::Anchor => v.slot.and_then(|s| self.anchors.get(&s)),
                ValueRole::Weight => params.weights.get(&v.label),
                _ => None,
            };
            values.insert(id, t.ok_or(Error::Binding(id.0))?);
        }
        Ok(Bindings {
            batch: self.batch,
            values,
            rels: self.rels.clone(),
        })
    }
}

/// Splits an answer tensor into per-row clause embeddings: `(B, 2d)` is
/// one clause per row, `(B, k, 2d)` is `k`.
pub fn clause_embeddings<T: Element>(answer: &Tensor<T>) -> Vec<Vec<BetaEmbedding>> {
    let shape = answer.shape();
    let width = *shape.last().expect("rank >= 1");
    (0..shape[0])
        .map(|b| {
            answer
                .row(b)
                .chunks(width)
                .map(|c| BetaEmbedding::from_flat(&c.iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
                .collect()
        })
        .collect()
}

/// The answer node of `g`.
pub fn answer_node(g: &ComputationGraph) -> Result<NodeId> {
    g.answer().ok_or_else(|| Error::InvalidGraph("graph has no unique answer node".into()))
}
