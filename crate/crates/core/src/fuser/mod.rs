//! Fusion strategy assignment, group collection and graph rewriting.

mod rewrite;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::NodeId;
use crate::pattern::{ModularizedGraph, ModuleId};

pub use rewrite::{fuse, fuse_with_report, FusedOpInfo, FusionReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionStrategy {
    Horizontal,
    Vertical,
    Hybrid,
}

impl FusionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Horizontal => "horizontal",
            FusionStrategy::Vertical => "vertical",
            FusionStrategy::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionGroup {
    /// Ascending.
    pub members: Vec<ModuleId>,
    pub strategy: FusionStrategy,
    /// Boundary values read by the group, ascending.
    pub inputs: Vec<NodeId>,
    /// Boundary values produced by the group, ascending.
    pub outputs: Vec<NodeId>,
    /// Set when a hybrid group took in neighbouring groups.
    pub absorbed: bool,
}

/// Degree view of a module DAG.
struct Dag {
    ids: Vec<ModuleId>,
    succ: BTreeMap<ModuleId, Vec<ModuleId>>,
    pred: BTreeMap<ModuleId, Vec<ModuleId>>,
}

impl Dag {
    fn new(m: &ModularizedGraph) -> Self {
        let ids = m.module_ids();
        let mut succ: BTreeMap<ModuleId, Vec<ModuleId>> = ids.iter().map(|i| (*i, Vec::new())).collect();
        let mut pred = succ.clone();
        for &(a, b) in &m.module_dag {
            succ.get_mut(&a).expect("known module").push(b);
            pred.get_mut(&b).expect("known module").push(a);
        }
        Dag { ids, succ, pred }
    }

    fn indeg(&self, m: ModuleId) -> usize {
        self.pred[&m].len()
    }

    fn outdeg(&self, m: ModuleId) -> usize {
        self.succ[&m].len()
    }

    /// No path leaves `set` and comes back.
    fn convex(&self, set: &BTreeSet<ModuleId>) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<ModuleId> = set
            .iter()
            .flat_map(|m| self.succ[m].iter().copied())
            .filter(|s| !set.contains(s))
            .collect();
        while let Some(x) = stack.pop() {
            if !seen.insert(x) {
                continue;
            }
            for &s in &self.succ[&x] {
                if set.contains(&s) {
                    return false;
                }
                stack.push(s);
            }
        }
        true
    }
}

/// Assigns each module a strategy from its position in the module DAG. A
/// module with two or more predecessors joins branches; joins and the
/// modules feeding them are vertical. A module on a chain link (an edge
/// whose source has one successor and whose target has one predecessor)
/// is horizontal. Modules that are both are hybrid; modules that are
/// neither default to horizontal.
pub fn determine_strategies(m: &ModularizedGraph) -> BTreeMap<ModuleId, FusionStrategy> {
    let dag = Dag::new(m);
    let join = |u: ModuleId| dag.indeg(u) >= 2;
    let link = |a: ModuleId, b: ModuleId| dag.outdeg(a) == 1 && dag.indeg(b) == 1;
    dag.ids
        .iter()
        .map(|&u| {
            let vertical = join(u) || dag.succ[&u].iter().any(|&s| join(s));
            let horizontal = dag.succ[&u].iter().any(|&s| link(u, s)) || dag.pred[&u].iter().any(|&p| link(p, u));
            let s = match (horizontal, vertical) {
                (true, true) => FusionStrategy::Hybrid,
                (false, true) => FusionStrategy::Vertical,
                _ => FusionStrategy::Horizontal,
            };
            (u, s)
        })
        .collect()
}

/// Values a module hands to other modules or leaves as graph sinks.
fn exports(m: &ModularizedGraph) -> BTreeMap<ModuleId, Vec<(NodeId, BTreeSet<ModuleId>)>> {
    let mut consumers: BTreeMap<NodeId, BTreeSet<ModuleId>> = BTreeMap::new();
    for op in m.graph.op_nodes() {
        for v in &op.inputs {
            consumers.entry(*v).or_default().insert(m.module_of(op.id).expect("op has a module"));
        }
    }
    let mut out: BTreeMap<ModuleId, Vec<(NodeId, BTreeSet<ModuleId>)>> = BTreeMap::new();
    for op in m.graph.op_nodes() {
        let owner = m.module_of(op.id).expect("op has a module");
        let cs = consumers.get(&op.output).cloned().unwrap_or_default();
        if cs.is_empty() || cs.iter().any(|c| *c != owner) {
            out.entry(owner).or_default().push((op.output, cs));
        }
    }
    out
}

fn group_outputs(ex: &BTreeMap<ModuleId, Vec<(NodeId, BTreeSet<ModuleId>)>>, set: &BTreeSet<ModuleId>) -> Vec<NodeId> {
    let mut outs: Vec<NodeId> = set
        .iter()
        .filter_map(|mid| ex.get(mid))
        .flatten()
        .filter(|(_, cs)| cs.is_empty() || cs.iter().any(|c| !set.contains(c)))
        .map(|(v, _)| *v)
        .collect();
    outs.sort();
    outs
}

/// Collects maximal convex groups. Pass one walks modules in dependency
/// order and merges each into the groups of its same-strategy predecessors,
/// lowest predecessor first. Pass two lets hybrid groups absorb adjacent
/// groups until nothing changes. Every merge must keep the group convex
/// with a single boundary output.
pub fn collect_groups(m: &ModularizedGraph, strategies: &BTreeMap<ModuleId, FusionStrategy>) -> Vec<FusionGroup> {
    let dag = Dag::new(m);
    let ex = exports(m);
    let ok = |set: &BTreeSet<ModuleId>| dag.convex(set) && group_outputs(&ex, set).len() == 1;
    let order = m.topo_modules().expect("modularized graph is acyclic");

    struct G {
        members: BTreeSet<ModuleId>,
        strategy: FusionStrategy,
        absorbed: bool,
    }
    let mut groups: Vec<Option<G>> = Vec::new();
    let mut group_of: BTreeMap<ModuleId, usize> = BTreeMap::new();

    for &u in &order {
        let s = strategies[&u];
        let mut cur = groups.len();
        groups.push(Some(G {
            members: BTreeSet::from([u]),
            strategy: s,
            absorbed: false,
        }));
        group_of.insert(u, cur);
        let mut preds = dag.pred[&u].clone();
        preds.sort();
        for p in preds {
            if strategies[&p] != s {
                continue;
            }
            let gi = group_of[&p];
            if gi == cur {
                continue;
            }
            let mut union = groups[gi].as_ref().expect("live group").members.clone();
            union.extend(groups[cur].as_ref().expect("live group").members.iter().copied());
            if ok(&union) {
                let moved = groups[cur].take().expect("live group");
                for x in &moved.members {
                    group_of.insert(*x, gi);
                }
                groups[gi].as_mut().expect("live group").members = union;
                cur = gi;
            }
        }
    }

    loop {
        let mut live: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].is_some()).collect();
        live.sort_by_key(|&i| *groups[i].as_ref().expect("live").members.first().expect("nonempty"));
        let mut merged = false;
        'outer: for &hi in &live {
            if groups[hi].as_ref().expect("live").strategy != FusionStrategy::Hybrid {
                continue;
            }
            for &oi in &live {
                if oi == hi {
                    continue;
                }
                let (h, o) = (groups[hi].as_ref().expect("live"), groups[oi].as_ref().expect("live"));
                let adjacent = m
                    .module_dag
                    .iter()
                    .any(|(a, b)| (h.members.contains(a) && o.members.contains(b)) || (o.members.contains(a) && h.members.contains(b)));
                if !adjacent {
                    continue;
                }
                let mut union = h.members.clone();
                union.extend(o.members.iter().copied());
                if ok(&union) {
                    let other = groups[oi].take().expect("live");
                    let h = groups[hi].as_mut().expect("live");
                    h.members = union;
                    h.absorbed = true;
                    for x in &other.members {
                        group_of.insert(*x, hi);
                    }
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }

    let op_module: BTreeMap<NodeId, ModuleId> = m.modules.iter().map(|(op, (mid, _))| (*op, *mid)).collect();
    let mut out: Vec<FusionGroup> = groups
        .into_iter()
        .flatten()
        .map(|g| {
            let outputs = group_outputs(&ex, &g.members);
            let produced: BTreeSet<NodeId> = m
                .graph
                .op_nodes()
                .filter(|o| g.members.contains(&op_module[&o.id]))
                .map(|o| o.output)
                .collect();
            let inputs: BTreeSet<NodeId> = m
                .graph
                .op_nodes()
                .filter(|o| g.members.contains(&op_module[&o.id]))
                .flat_map(|o| o.inputs.iter().copied())
                .filter(|v| !produced.contains(v))
                .collect();
            FusionGroup {
                members: g.members.into_iter().collect(),
                strategy: g.strategy,
                inputs: inputs.into_iter().collect(),
                outputs,
                absorbed: g.absorbed,
            }
        })
        .collect();
    out.sort_by_key(|g| g.members[0]);
    out
}

/// Convexity by explicit path enumeration between every ordered pair of
/// members.
pub fn is_convex_by_paths(m: &ModularizedGraph, members: &[ModuleId]) -> bool {
    let set: BTreeSet<ModuleId> = members.iter().copied().collect();
    let dag = Dag::new(m);
    fn walk(dag: &Dag, set: &BTreeSet<ModuleId>, at: ModuleId, left: bool) -> bool {
        for &s in &dag.succ[&at] {
            let inside = set.contains(&s);
            if inside && left {
                return false;
            }
            if !walk(dag, set, s, left || !inside) {
                return false;
            }
        }
        true
    }
    set.iter().all(|&start| walk(&dag, &set, start, false))
}
