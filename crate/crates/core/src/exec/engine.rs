use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::kernels::{
    arg_slice, blockable, matmul_rows, plan_kernel, row_kernel, row_kernel_in_place, row_order, rows_mut,
    run_kernel_threaded, weight_runs, KernelPlan,
};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};
use crate::ir::{topo_order, validate, ComputationGraph, FunctionSpec, GraphLevel, NodeId, Operand, PrimKind};
use crate::kg::RelationId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Unfused,
    Fused,
}

impl ExecMode {
    pub const ALL: [ExecMode; 2] = [ExecMode::Unfused, ExecMode::Fused];

    pub fn name(self) -> &'static str {
        match self {
            ExecMode::Unfused => "unfused",
            ExecMode::Fused => "fused",
        }
    }

    pub fn level(self) -> GraphLevel {
        match self {
            ExecMode::Unfused => GraphLevel::Primitive,
            ExecMode::Fused => GraphLevel::Fused,
        }
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExecMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownTag {
                tag: s.to_string(),
                valid: "unfused, fused".into(),
            })
    }
}

/// Counters of one execution. Byte counters cover buffers the engine
/// allocates; caller-owned inputs and weights are not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionStats {
    pub kernel_launches: u64,
    /// Bytes of materialized non-output buffers.
    pub interm_bytes: u64,
    /// Largest live byte count, freeing each buffer after its last use.
    pub peak_bytes: u64,
    pub wall_ns: u64,
    /// Non-finite elements in the outputs.
    pub non_finite: u64,
}

impl ExecutionStats {
    /// Folds in the stats of a later, separate execution.
    pub fn merge(&mut self, o: &ExecutionStats) {
        self.kernel_launches += o.kernel_launches;
        self.interm_bytes += o.interm_bytes;
        self.peak_bytes = self.peak_bytes.max(o.peak_bytes);
        self.wall_ns += o.wall_ns;
        self.non_finite += o.non_finite;
    }
}

/// External inputs of one dispatch: a tensor per input value node and the
/// per-row relations of every relation slot.
#[derive(Debug, Clone)]
pub struct Bindings<'a, T> {
    pub batch: usize,
    pub values: BTreeMap<NodeId, &'a Tensor<T>>,
    pub rels: BTreeMap<usize, Vec<RelationId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// Workers sharing each dispatch by batch rows.
    pub threads: usize,
    /// Rows per scratch tile in fused kernels.
    pub tile_rows: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            threads: 1,
            tile_rows: 256,
        }
    }
}

pub type Outputs<T> = BTreeMap<NodeId, Tensor<T>>;

/// A validated graph with its dispatch order and buffer lifetimes.
#[derive(Debug, Clone)]
pub struct Executable<'g> {
    g: &'g ComputationGraph,
    mode: ExecMode,
    order: Vec<NodeId>,
    /// Position in `order` of each value's last consumer.
    last_use: BTreeMap<NodeId, usize>,
    sinks: BTreeSet<NodeId>,
    rel_slots: BTreeSet<usize>,
}

/// Scratch layout of one fused-op step.
struct StepPlan<T> {
    kind: PrimKind,
    plan: KernelPlan,
    width: usize,
    /// Offset in the per-row arena, in elements.
    slot: usize,
    in_place: bool,
    eps: T,
    rel_slot: Option<usize>,
}

struct FusedPlan<T> {
    steps: Vec<StepPlan<T>>,
    arena_width: usize,
    /// Largest live scratch width per row, output included.
    peak_width: usize,
}

impl<'g> Executable<'g> {
    pub fn new(g: &'g ComputationGraph, mode: ExecMode) -> Result<Self> {
        if g.level != mode.level() {
            return Err(Error::Usage(format!(
                "{mode} execution needs a {:?}-level graph, got {:?}",
                mode.level(),
                g.level
            )));
        }
        validate(g).into_result()?;
        let order = topo_order(g)?;
        let mut last_use = BTreeMap::new();
        let mut rel_slots = BTreeSet::new();
        for (i, &id) in order.iter().enumerate() {
            let op = g.op(id).expect("topo order yields ops");
            for v in &op.inputs {
                last_use.insert(*v, i);
            }
            for step in &g.functions[&id].steps {
                if step.kind.prim().is_none() {
                    return Err(Error::Usage(format!("op {id} has a non-primitive step {}", step.kind.name())));
                }
                rel_slots.extend(step.attrs.rel_slot);
            }
        }
        let sinks = g
            .op_nodes()
            .map(|o| o.output)
            .filter(|v| !last_use.contains_key(v))
            .collect();
        Ok(Executable {
            g,
            mode,
            order,
            last_use,
            sinks,
            rel_slots,
        })
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    fn check<T: Element>(&self, b: &Bindings<T>) -> Result<()> {
        for v in self.g.external_inputs() {
            if !b.values.contains_key(&v) {
                return Err(Error::Binding(v.0));
            }
        }
        for s in &self.rel_slots {
            match b.rels.get(s) {
                Some(r) if r.len() == b.batch => {}
                _ => return Err(Error::Usage(format!("relation slot {s} needs {} bindings", b.batch))),
            }
        }
        Ok(())
    }

    pub fn run<T: Element>(&self, b: &Bindings<T>, opts: &ExecOptions) -> Result<(Outputs<T>, ExecutionStats)> {
        self.check(b)?;
        let mut vals: Vec<Option<Tensor<T>>> = (0..self.g.nodes.len()).map(|_| None).collect();
        let mut stats = ExecutionStats::default();
        let (mut live, mut peak) = (0u64, 0u64);
        let start = Instant::now();
        for (idx, &op_id) in self.order.iter().enumerate() {
            let op = self.g.op(op_id).expect("op");
            let (out, scratch) = {
                let ins: Vec<&Tensor<T>> = op
                    .inputs
                    .iter()
                    .map(|v| vals[v.0].as_ref().or_else(|| b.values.get(v).copied()).expect("inputs checked"))
                    .collect();
                match self.mode {
                    ExecMode::Unfused => {
                        let kind = op.kind.prim().expect("primitive op");
                        let rels = op.attrs.rel_slot.map(|s| b.rels[&s].as_slice());
                        let out = run_kernel_threaded(kind, &ins, &op.attrs, rels, opts.threads)?;
                        let bytes = out.bytes() as u64;
                        (out, bytes)
                    }
                    ExecMode::Fused => {
                        let f = &self.g.functions[&op_id];
                        let plan = plan_fused::<T>(f, &ins, b.batch)?;
                        let out = run_fused(f, &plan, &ins, b, opts)?;
                        let scratch = (b.batch * plan.peak_width * std::mem::size_of::<T>()) as u64;
                        (out, scratch)
                    }
                }
            };
            stats.kernel_launches += 1;
            peak = peak.max(live + scratch);
            let bytes = out.bytes();
            live += bytes;
            if !self.sinks.contains(&op.output) {
                stats.interm_bytes += bytes;
            }
            vals[op.output.0] = Some(out);
            let mut seen = BTreeSet::new();
            for v in &op.inputs {
                if seen.insert(*v) && self.last_use.get(v) == Some(&idx) {
                    if let Some(t) = vals[v.0].take() {
                        live -= t.bytes();
                    }
                }
            }
        }
        stats.wall_ns = start.elapsed().as_nanos() as u64;
        stats.peak_bytes = peak;
        let mut outputs = BTreeMap::new();
        for &v in &self.sinks {
            let t = vals[v.0].take().expect("sink computed");
            stats.non_finite += t.data().iter().filter(|x| !x.is_finite()).count() as u64;
            outputs.insert(v, t);
        }
        Ok((outputs, stats))
    }
}

/// Runs `g` once with default options.
pub fn execute<T: Element>(g: &ComputationGraph, b: &Bindings<T>, mode: ExecMode) -> Result<(Outputs<T>, ExecutionStats)> {
    Executable::new(g, mode)?.run(b, &ExecOptions::default())
}

/// First-fit allocator over a per-row arena.
#[derive(Default)]
struct Arena {
    free: Vec<(usize, usize)>,
    end: usize,
}

impl Arena {
    fn alloc(&mut self, width: usize) -> usize {
        if let Some(i) = self.free.iter().position(|&(_, len)| len >= width) {
            let (off, len) = self.free[i];
            if len == width {
                self.free.remove(i);
            } else {
                self.free[i] = (off + width, len - width);
            }
            return off;
        }
        let off = self.end;
        self.end += width;
        off
    }

    fn release(&mut self, off: usize, width: usize) {
        self.free.push((off, width));
        self.free.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(self.free.len());
        for &(o, l) in &self.free {
            match merged.last_mut() {
                Some((mo, ml)) if *mo + *ml == o => *ml += l,
                _ => merged.push((o, l)),
            }
        }
        self.free = merged;
    }
}

fn plan_fused<T: Element>(f: &FunctionSpec, ins: &[&Tensor<T>], batch: usize) -> Result<FusedPlan<T>> {
    let n = f.steps.len();
    let mut last_use = vec![0usize; n];
    for (s, step) in f.steps.iter().enumerate() {
        for op in &step.inputs {
            if let Operand::Step(j) = *op {
                last_use[j] = s;
            }
        }
    }
    let mut arena = Arena::default();
    let (mut live, mut peak) = (0usize, 0usize);
    let mut steps: Vec<StepPlan<T>> = Vec::with_capacity(n);
    for (s, step) in f.steps.iter().enumerate() {
        let kind = step.kind.prim().expect("checked primitive");
        let shapes: Vec<Vec<usize>> = step
            .inputs
            .iter()
            .map(|op| match *op {
                Operand::Input(k) => ins[k].shape().to_vec(),
                Operand::Step(j) => {
                    let mut v = vec![batch];
                    v.extend_from_slice(&steps[j].plan.out_row);
                    v
                }
            })
            .collect();
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let plan = plan_kernel(kind, &step.attrs, &refs, batch)?;
        let width = plan.out_width();
        let last = s + 1 == n;
        let reuse = match step.inputs.first() {
            Some(&Operand::Step(j))
                if !last
                    && kind.in_place()
                    && last_use[j] == s
                    && steps[j].width == width
                    && !step.inputs[1..].contains(&Operand::Step(j)) =>
            {
                Some(j)
            }
            _ => None,
        };
        let slot = match reuse {
            Some(j) => steps[j].slot,
            None => {
                live += width;
                if last {
                    0
                } else {
                    arena.alloc(width)
                }
            }
        };
        peak = peak.max(live);
        let mut freed = BTreeSet::new();
        for op in &step.inputs {
            if let Operand::Step(j) = *op {
                if last_use[j] == s && Some(j) != reuse && freed.insert(j) {
                    arena.release(steps[j].slot, steps[j].width);
                    live -= steps[j].width;
                }
            }
        }
        steps.push(StepPlan {
            kind,
            plan,
            width,
            slot,
            in_place: reuse.is_some(),
            eps: T::from_f64(step.attrs.eps.unwrap_or(0.0)),
            rel_slot: step.attrs.rel_slot,
        });
    }
    Ok(FusedPlan {
        steps,
        arena_width: arena.end,
        peak_width: peak,
    })
}

fn run_fused<T: Element>(
    f: &FunctionSpec,
    plan: &FusedPlan<T>,
    ins: &[&Tensor<T>],
    b: &Bindings<T>,
    opts: &ExecOptions,
) -> Result<Tensor<T>> {
    let last = plan.steps.last().expect("function has steps");
    let mut shape = vec![b.batch];
    shape.extend_from_slice(&last.plan.out_row);
    let mut out = Tensor::zeros(shape);
    let width = last.width;
    let tile = opts.tile_rows.max(1);
    let threads = opts.threads.max(1).min(b.batch.div_ceil(tile).max(1));
    if threads == 1 || width == 0 {
        fused_rows(f, plan, ins, b, 0, out.data_mut(), tile)?;
    } else {
        let per = b.batch.div_ceil(threads).div_ceil(tile) * tile;
        std::thread::scope(|scope| {
            let handles: Vec<_> = out
                .data_mut()
                .chunks_mut(per * width)
                .enumerate()
                .map(|(i, chunk)| scope.spawn(move || fused_rows(f, plan, ins, b, i * per, chunk, tile)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fused worker panicked"))
                .collect::<Result<Vec<()>>>()
        })?;
    }
    Ok(out)
}

/// Step-major execution over tiles of `tile` rows; step results live in a
/// tile arena and only the last step writes to `out`.
fn fused_rows<T: Element>(
    f: &FunctionSpec,
    plan: &FusedPlan<T>,
    ins: &[&Tensor<T>],
    b: &Bindings<T>,
    first: usize,
    out: &mut [T],
    tile: usize,
) -> Result<()> {
    let n = plan.steps.len();
    let out_width = plan.steps[n - 1].width;
    let rows_total = out.len() / out_width;
    let tile = tile.min(rows_total).max(1);
    let mut arena = vec![T::zero(); tile * plan.arena_width];
    let rels: Vec<Option<&[RelationId]>> = plan
        .steps
        .iter()
        .map(|s| s.rel_slot.map(|r| b.rels[&r].as_slice()))
        .collect();
    let mut orders: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let plain: Vec<usize> = (0..tile).collect();
    for t0 in (0..rows_total).step_by(tile) {
        let rows = tile.min(rows_total - t0);
        orders.clear();
        for sp in &plan.steps {
            if let Some(slot) = sp.rel_slot {
                orders
                    .entry(slot)
                    .or_insert_with(|| row_order(Some(&b.rels[&slot]), first + t0, rows));
            }
        }
        for (s, sp) in plan.steps.iter().enumerate() {
            let operands = &f.steps[s].inputs;
            let rel = rels[s];
            let order = match sp.rel_slot {
                Some(slot) => &orders[&slot][..],
                None => &plain[..rows],
            };
            if s + 1 == n {
                let mut args: Vec<&[T]> = Vec::with_capacity(operands.len());
                for &r in order {
                    args.clear();
                    for (k, op) in operands.iter().enumerate() {
                        args.push(match *op {
                            Operand::Input(i) => arg_slice(ins[i], sp.plan.modes[k], first + t0 + r, rel)?,
                            Operand::Step(j) => {
                                let o = plan.steps[j].slot * tile + r * plan.steps[j].width;
                                &arena[o..o + plan.steps[j].width]
                            }
                        });
                    }
                    row_kernel(sp.kind, sp.eps, &args, &mut out[(t0 + r) * out_width..(t0 + r + 1) * out_width]);
                }
                continue;
            }
            let (lo, rest) = arena.split_at_mut(sp.slot * tile);
            let (mid, hi) = rest.split_at_mut(sp.width * tile);
            let hi_base = (sp.slot + sp.width) * tile;
            let at = |j: usize, r: usize| -> &[T] {
                let w = plan.steps[j].width;
                let o = plan.steps[j].slot * tile + r * w;
                if o < lo.len() {
                    &lo[o..o + w]
                } else {
                    &hi[o - hi_base..o - hi_base + w]
                }
            };
            if !sp.in_place && blockable(sp.kind, &sp.plan) {
                let key = |r: usize| rel.map(|x| x[first + t0 + r]);
                for run in weight_runs(order, key) {
                    let w = match operands[1] {
                        Operand::Input(i) => arg_slice(ins[i], sp.plan.modes[1], first + t0 + run[0], rel)?,
                        Operand::Step(j) => at(j, run[0]),
                    };
                    let mut xs: Vec<&[T]> = Vec::with_capacity(run.len());
                    for &r in run {
                        xs.push(match operands[0] {
                            Operand::Input(i) => arg_slice(ins[i], sp.plan.modes[0], first + t0 + r, rel)?,
                            Operand::Step(j) => at(j, r),
                        });
                    }
                    let mut outs = rows_mut(&mut mid[..], sp.width, run);
                    matmul_rows(&xs, w, &mut outs);
                }
                continue;
            }
            let mut args: Vec<&[T]> = Vec::with_capacity(operands.len());
            for &r in order {
                let dst = &mut mid[r * sp.width..(r + 1) * sp.width];
                args.clear();
                let start = usize::from(sp.in_place);
                for (k, op) in operands.iter().enumerate().skip(start) {
                    args.push(match *op {
                        Operand::Input(i) => arg_slice(ins[i], sp.plan.modes[k], first + t0 + r, rel)?,
                        Operand::Step(j) => at(j, r),
                    });
                }
                if sp.in_place {
                    row_kernel_in_place(sp.kind, sp.eps, dst, args.first().copied());
                } else {
                    row_kernel(sp.kind, sp.eps, &args, dst);
                }
            }
        }
    }
    Ok(())
}
