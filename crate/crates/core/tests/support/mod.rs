//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;

use kgc_core::exec::{Element, Tensor};
use kgc_core::ir::{ComputationGraph, Node, NodeId};
use kgc_core::kg::KnowledgeGraph;
use kgc_core::pattern::{ModularizedGraph, ModuleId};
use kgc_core::query::{Combinator, GroundedQuery, SlotKind};

/// Recursive evaluator over a flat triple scan. Shares nothing with the
/// adjacency-based oracle beyond the query and triple types.
fn naive(g: &KnowledgeGraph, q: &GroundedQuery, slot: usize) -> BTreeSet<u32> {
    let s = &q.structure;
    if s.slots[slot] == SlotKind::Anchor {
        let k = s.slots[..slot].iter().filter(|k| **k == SlotKind::Anchor).count();
        return BTreeSet::from([q.anchors[k]]);
    }
    let mut parts = Vec::new();
    for (e, edge) in s.edges.iter().enumerate() {
        if edge.target != slot {
            continue;
        }
        let src = naive(g, q, edge.source);
        let mut hit: BTreeSet<u32> = g
            .triples()
            .iter()
            .filter(|t| t.rel == q.rels[e] && src.contains(&t.head))
            .map(|t| t.tail)
            .collect();
        if edge.negated {
            hit = (0..g.num_entities() as u32).filter(|x| !hit.contains(x)).collect();
        }
        parts.push(hit);
    }
    let mut it = parts.into_iter();
    let first = it.next().expect("non-anchor slot has an incoming edge");
    match s.combinators[slot] {
        Combinator::Union => it.fold(first, |a, b| a.union(&b).copied().collect()),
        _ => it.fold(first, |a, b| a.intersection(&b).copied().collect()),
    }
}

pub fn naive_answer(g: &KnowledgeGraph, q: &GroundedQuery) -> BTreeSet<u32> {
    naive(g, q, q.structure.answer_slot())
}

/// Tanh-sinh quadrature over (0, 1), halving the step until two levels
/// agree. `f` receives `t` and `1 - t`, both computed without cancellation
/// so endpoint singularities stay resolvable.
pub fn integrate01(f: impl Fn(f64, f64) -> f64) -> f64 {
    let term = |s: f64| -> Option<f64> {
        let u = FRAC_PI_2 * s.sinh();
        if u > 700.0 {
            return None;
        }
        let a = (-u).exp() / (2.0 * u.cosh());
        if a < 1e-300 {
            return None;
        }
        let w = 0.5 * FRAC_PI_2 * s.cosh() / (u.cosh() * u.cosh());
        Some(w * (f(a, 1.0 - a) + f(1.0 - a, a)))
    };
    let side = |start: f64, step: f64| -> f64 {
        let mut acc = 0.0;
        let mut s = start;
        while let Some(v) = term(s) {
            acc += v;
            s += step;
        }
        acc
    };
    let mut h = 0.5;
    let mut sum = 0.5 * FRAC_PI_2 * f(0.5, 0.5) + side(h, h);
    let mut prev = sum * h;
    for _ in 0..12 {
        h *= 0.5;
        sum += side(h, 2.0 * h);
        let est = sum * h;
        if (est - prev).abs() <= 1e-15 * est.abs() {
            return est;
        }
        prev = est;
    }
    prev
}

pub fn quad_log_beta(a: f64, b: f64) -> f64 {
    integrate01(|t, omt| ((a - 1.0) * t.ln() + (b - 1.0) * omt.ln()).exp()).ln()
}

/// `KL(Beta(ap, bp) || Beta(aq, bq))` by integrating `p ln(p/q)`.
pub fn quad_kl(ap: f64, bp: f64, aq: f64, bq: f64) -> f64 {
    let (lp, lq) = (quad_log_beta(ap, bp), quad_log_beta(aq, bq));
    integrate01(|t, omt| {
        let (lt, lo) = (t.ln(), omt.ln());
        let logp = (ap - 1.0) * lt + (bp - 1.0) * lo - lp;
        let logq = (aq - 1.0) * lt + (bq - 1.0) * lo - lq;
        logp.exp() * (logp - logq)
    })
}

pub fn max_rel_err<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// Depth-first cycle check straight off the edge list.
pub fn is_dag(g: &ComputationGraph) -> bool {
    let mut succ: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(a, b) in &g.edges {
        succ.entry(a).or_default().push(b);
    }
    fn visit(n: NodeId, succ: &BTreeMap<NodeId, Vec<NodeId>>, state: &mut BTreeMap<NodeId, u8>) -> bool {
        match state.get(&n) {
            Some(1) => return false,
            Some(2) => return true,
            _ => {}
        }
        state.insert(n, 1);
        for &s in succ.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if !visit(s, succ, state) {
                return false;
            }
        }
        state.insert(n, 2);
        true
    }
    let mut state = BTreeMap::new();
    g.nodes.iter().all(|n| visit(n.id(), &succ, &mut state))
}

pub fn is_bipartite(g: &ComputationGraph) -> bool {
    g.edges.iter().all(|&(a, b)| {
        matches!(
            (g.node(a), g.node(b)),
            (Some(Node::Value(_)), Some(Node::Op(_))) | (Some(Node::Op(_)), Some(Node::Value(_)))
        )
    })
}

/// Every path of the module DAG, as node lists.
pub fn all_paths(m: &ModularizedGraph) -> Vec<Vec<ModuleId>> {
    let mut succ: BTreeMap<ModuleId, Vec<ModuleId>> = BTreeMap::new();
    for &(a, b) in &m.module_dag {
        succ.entry(a).or_default().push(b);
    }
    fn extend(path: &mut Vec<ModuleId>, succ: &BTreeMap<ModuleId, Vec<ModuleId>>, out: &mut Vec<Vec<ModuleId>>) {
        out.push(path.clone());
        let last = *path.last().unwrap();
        for &s in succ.get(&last).map(Vec::as_slice).unwrap_or(&[]) {
            path.push(s);
            extend(path, succ, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    for id in m.module_ids() {
        extend(&mut vec![id], &succ, &mut out);
    }
    out
}

/// No path with both ends in `members` passes outside it.
pub fn convex(paths: &[Vec<ModuleId>], members: &BTreeSet<ModuleId>) -> bool {
    paths.iter().all(|p| {
        let (first, last) = (p[0], *p.last().unwrap());
        !(members.contains(&first) && members.contains(&last)) || p.iter().all(|x| members.contains(x))
    })
}

pub fn weakly_connected(m: &ModularizedGraph, members: &BTreeSet<ModuleId>) -> bool {
    let mut seen = BTreeSet::from([*members.iter().next().unwrap()]);
    loop {
        let before = seen.len();
        for &(a, b) in &m.module_dag {
            if members.contains(&a) && members.contains(&b) && (seen.contains(&a) || seen.contains(&b)) {
                seen.insert(a);
                seen.insert(b);
            }
        }
        if seen.len() == before {
            return seen.len() == members.len();
        }
    }
}
