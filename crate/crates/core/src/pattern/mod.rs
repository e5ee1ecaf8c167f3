//! FOL-operator templates, expansion of FOL graphs into primitive graphs,
//! and recognition of operator modules in primitive graphs.

mod expand;
mod recognize;
mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{validate, ComputationGraph, FolKind, NodeId};

pub use expand::expand;
pub use recognize::recognize;
pub use template::{register_template, Arg, PatternTemplate, TemplateLibrary, TemplateStep, WeightSpec};

/// Module identifier: the smallest primitive op id among its members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModuleId(pub usize);

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Project,
    And,
    Or,
    Not,
    /// Primitive op not covered by any template.
    Opaque,
}

impl ModuleKind {
    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Project => "project",
            ModuleKind::And => "and",
            ModuleKind::Or => "or",
            ModuleKind::Not => "not",
            ModuleKind::Opaque => "opaque",
        }
    }

    pub fn fol(self) -> Option<FolKind> {
        match self {
            ModuleKind::Project => Some(FolKind::Project),
            ModuleKind::And => Some(FolKind::And),
            ModuleKind::Or => Some(FolKind::Or),
            ModuleKind::Not => Some(FolKind::Not),
            ModuleKind::Opaque => None,
        }
    }
}

impl From<FolKind> for ModuleKind {
    fn from(k: FolKind) -> Self {
        match k {
            FolKind::Project => ModuleKind::Project,
            FolKind::And => ModuleKind::And,
            FolKind::Or => ModuleKind::Or,
            FolKind::Not => ModuleKind::Not,
        }
    }
}

/// Primitive graph annotated with the operator module owning each op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModularizedGraph {
    pub graph: ComputationGraph,
    pub modules: BTreeMap<NodeId, (ModuleId, ModuleKind)>,
    /// Quotient edges, sorted and deduplicated.
    pub module_dag: Vec<(ModuleId, ModuleId)>,
}

impl ModularizedGraph {
    /// Builds the module map and quotient graph from op groups.
    pub fn from_partition(graph: ComputationGraph, parts: Vec<(Vec<NodeId>, ModuleKind)>) -> Result<Self> {
        let mut modules = BTreeMap::new();
        for (ops, kind) in parts {
            let id = ModuleId(
                ops.iter()
                    .map(|o| o.0)
                    .min()
                    .ok_or_else(|| Error::Structure("empty module".into()))?,
            );
            for op in ops {
                if modules.insert(op, (id, kind)).is_some() {
                    return Err(Error::Structure(format!("op {op} is in two modules")));
                }
            }
        }
        let m = ModularizedGraph {
            module_dag: quotient(&graph, &modules),
            graph,
            modules,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn module_ids(&self) -> Vec<ModuleId> {
        let set: BTreeSet<ModuleId> = self.modules.values().map(|(m, _)| *m).collect();
        set.into_iter().collect()
    }

    pub fn num_modules(&self) -> usize {
        self.module_ids().len()
    }

    pub fn module_of(&self, op: NodeId) -> Option<ModuleId> {
        self.modules.get(&op).map(|(m, _)| *m)
    }

    pub fn kind(&self, m: ModuleId) -> Option<ModuleKind> {
        self.modules.get(&NodeId(m.0)).map(|(_, k)| *k)
    }

    /// Member ops of `m`, ascending.
    pub fn members(&self, m: ModuleId) -> Vec<NodeId> {
        self.modules.iter().filter(|(_, (id, _))| *id == m).map(|(op, _)| *op).collect()
    }

    pub fn predecessors(&self, m: ModuleId) -> Vec<ModuleId> {
        self.module_dag.iter().filter(|(_, b)| *b == m).map(|(a, _)| *a).collect()
    }

    pub fn successors(&self, m: ModuleId) -> Vec<ModuleId> {
        self.module_dag.iter().filter(|(a, _)| *a == m).map(|(_, b)| *b).collect()
    }

    /// Modules in dependency order, ties by id.
    pub fn topo_modules(&self) -> Result<Vec<ModuleId>> {
        let ids = self.module_ids();
        let mut indeg: BTreeMap<ModuleId, usize> = ids.iter().map(|m| (*m, 0)).collect();
        for (_, b) in &self.module_dag {
            *indeg.get_mut(b).expect("dag edge between known modules") += 1;
        }
        let mut ready: BTreeSet<ModuleId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(m, _)| *m).collect();
        let mut order = Vec::with_capacity(ids.len());
        while let Some(m) = ready.pop_first() {
            order.push(m);
            for s in self.successors(m) {
                let d = indeg.get_mut(&s).expect("known module");
                *d -= 1;
                if *d == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() != ids.len() {
            return Err(Error::Cycle);
        }
        Ok(order)
    }

    /// Every op in exactly one module, canonical ids, and an acyclic quotient.
    pub fn validate(&self) -> Result<()> {
        validate(&self.graph).into_result()?;
        let ops: BTreeSet<NodeId> = self.graph.op_nodes().map(|o| o.id).collect();
        let covered: BTreeSet<NodeId> = self.modules.keys().copied().collect();
        if ops != covered {
            return Err(Error::Structure("module map does not cover exactly the graph's ops".into()));
        }
        for m in self.module_ids() {
            if self.members(m).first().map(|o| o.0) != Some(m.0) {
                return Err(Error::Structure(format!("module {m} is not named by its smallest op")));
            }
        }
        self.topo_modules().map(|_| ())
    }
}

fn quotient(g: &ComputationGraph, modules: &BTreeMap<NodeId, (ModuleId, ModuleKind)>) -> Vec<(ModuleId, ModuleId)> {
    let producer: BTreeMap<NodeId, NodeId> = g.op_nodes().map(|o| (o.output, o.id)).collect();
    let mut edges = BTreeSet::new();
    for op in g.op_nodes() {
        let Some(&(to, _)) = modules.get(&op.id) else { continue };
        for v in &op.inputs {
            if let Some(&(from, _)) = producer.get(v).and_then(|p| modules.get(p)) {
                if from != to {
                    edges.insert((from, to));
                }
            }
        }
    }
    edges.into_iter().collect()
}
