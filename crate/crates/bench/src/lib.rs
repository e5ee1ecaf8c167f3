//! Shared setup for the criterion benchmarks.

use kgc_core::beta::{init_model, templates, ModelParams};
use kgc_core::exec::Element;
use kgc_core::kg::{KnowledgeGraph, SyntheticSpec};
use kgc_core::pipeline::{compile, BatchInputs, Compiled, ParamTensors};
use kgc_core::query::{generate_queries, ShapeTag};

/// A compiled task with one batch of bound inputs.
pub struct Workload<T> {
    pub compiled: Compiled,
    pub params: ParamTensors<T>,
    pub inputs: BatchInputs<T>,
}

pub fn model(d: usize, h: usize) -> (KnowledgeGraph, ModelParams) {
    let kg = KnowledgeGraph::synthetic(SyntheticSpec::default()).expect("synthetic graph");
    let p = init_model(&kg, d, h, 42);
    (kg, p)
}

pub fn workload<T: Element>(tag: ShapeTag, batch: usize, d: usize, h: usize) -> Workload<T> {
    let (kg, p) = model(d, h);
    let queries = generate_queries(&kg, tag, batch, 7).expect("queries");
    let compiled = compile(&queries[0], &templates(&p), T::KIND).expect("compile");
    let params = ParamTensors::new(&p).expect("params");
    let inputs = BatchInputs::new(&params, &queries).expect("inputs");
    Workload {
        compiled,
        params,
        inputs,
    }
}
