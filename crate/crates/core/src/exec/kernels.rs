//! Primitive kernels. Every kind is independent across the leading batch
//! axis, so each is written once as a per-row routine; the unfused
//! interpreter and fused kernels both call these routines, which keeps the
//! two modes bit-identical.

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};
use crate::ir::{OpAttrs, PrimKind};
use crate::kg::RelationId;

/// How a kernel operand is read for batch row `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgMode {
    /// Row `b` of a batch-major tensor.
    Row,
    /// The whole tensor, for every row.
    Shared,
    /// Entry `rels[b]` of a per-relation table.
    Gathered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelPlan {
    pub modes: Vec<ArgMode>,
    /// Output shape without the batch axis.
    pub out_row: Vec<usize>,
}

impl KernelPlan {
    pub fn out_width(&self) -> usize {
        self.out_row.iter().product()
    }
}

fn shape_err(kind: PrimKind, detail: String) -> Error {
    Error::Shape {
        op: kind.name().to_string(),
        detail,
    }
}

/// Checks operand shapes for `kind` and decides how each operand is read.
pub fn plan_kernel(kind: PrimKind, attrs: &OpAttrs, shapes: &[&[usize]], batch: usize) -> Result<KernelPlan> {
    let err = |d: String| Err(shape_err(kind, d));
    let arity = |n: usize| -> Result<()> {
        if shapes.len() == n {
            Ok(())
        } else {
            Err(shape_err(kind, format!("expected {n} operands, got {}", shapes.len())))
        }
    };
    let is_row = |s: &[usize]| s.len() >= 2 && s[0] == batch;
    if shapes.is_empty() {
        return err("no operands".into());
    }
    if !is_row(shapes[0]) {
        return err(format!("first operand {:?} is not batch-major with batch {batch}", shapes[0]));
    }
    let row0 = shapes[0][1..].to_vec();
    match kind {
        PrimKind::MatMul => {
            arity(2)?;
            if row0.len() != 1 {
                return err(format!("lhs {:?} must be rank 2", shapes[0]));
            }
            let k = row0[0];
            let (mode, w) = match attrs.rel_slot {
                Some(_) if shapes[1].len() == 3 => (ArgMode::Gathered, &shapes[1][1..]),
                None if shapes[1].len() == 2 => (ArgMode::Shared, shapes[1]),
                _ => return err(format!("weight {:?} has wrong rank", shapes[1])),
            };
            if w[0] != k {
                return err(format!("inner dims disagree: {:?} x {:?}", shapes[0], shapes[1]));
            }
            Ok(KernelPlan {
                modes: vec![ArgMode::Row, mode],
                out_row: vec![w[1]],
            })
        }
        PrimKind::Add => {
            arity(2)?;
            let b = shapes[1];
            let mode = if attrs.rel_slot.is_some() {
                if b.len() == row0.len() + 1 && b[1..] == row0[..] {
                    ArgMode::Gathered
                } else {
                    return err(format!("table {b:?} does not match rows {row0:?}"));
                }
            } else if b == shapes[0] {
                ArgMode::Row
            } else if b == &row0[..] {
                ArgMode::Shared
            } else {
                return err(format!("cannot broadcast {b:?} onto {:?}", shapes[0]));
            };
            Ok(KernelPlan {
                modes: vec![ArgMode::Row, mode],
                out_row: row0,
            })
        }
        PrimKind::Relu | PrimKind::Reciprocal | PrimKind::ClampMin => {
            arity(1)?;
            Ok(KernelPlan {
                modes: vec![ArgMode::Row],
                out_row: row0,
            })
        }
        PrimKind::Softmax if shapes.len() == 1 => Ok(KernelPlan {
            modes: vec![ArgMode::Row],
            out_row: row0,
        }),
        PrimKind::Softmax | PrimKind::Stack => {
            if row0.len() != 1 || shapes.iter().any(|s| *s != shapes[0]) {
                return err(format!("operands must share one rank-2 shape: {shapes:?}"));
            }
            Ok(KernelPlan {
                modes: vec![ArgMode::Row; shapes.len()],
                out_row: vec![shapes.len(), row0[0]],
            })
        }
        PrimKind::WeightedSum => {
            let k = shapes.len() - 1;
            if k == 0 || row0.len() != 2 || row0[0] != k {
                return err(format!("weights {:?} do not match {k} branches", shapes[0]));
            }
            let n = row0[1];
            if shapes[1..].iter().any(|s| !is_row(s) || s[1..] != [n]) {
                return err(format!("branches must be [{batch}, {n}]: {shapes:?}"));
            }
            Ok(KernelPlan {
                modes: vec![ArgMode::Row; shapes.len()],
                out_row: vec![n],
            })
        }
    }
}

/// Operand slice for row `b`.
#[inline]
pub fn arg_slice<'a, T: Element>(
    t: &'a Tensor<T>,
    mode: ArgMode,
    b: usize,
    rels: Option<&[RelationId]>,
) -> Result<&'a [T]> {
    Ok(match mode {
        ArgMode::Row => t.row(b),
        ArgMode::Shared => t.data(),
        ArgMode::Gathered => {
            let rels = rels.ok_or_else(|| Error::Usage("gathered operand without relation bindings".into()))?;
            let r = rels[b] as usize;
            if r >= t.shape()[0] {
                return Err(Error::Bounds {
                    what: "relation",
                    index: r,
                    len: t.shape()[0],
                });
            }
            t.row(r)
        }
    })
}

/// Computes one output row from its operand rows.
#[inline]
pub fn row_kernel<T: Element>(kind: PrimKind, eps: T, args: &[&[T]], out: &mut [T]) {
    match kind {
        PrimKind::MatMul => matmul_row(args[0], args[1], out),
        PrimKind::Add => {
            for ((o, &a), &b) in out.iter_mut().zip(args[0]).zip(args[1]) {
                *o = a + b;
            }
        }
        PrimKind::Relu => {
            for (o, &a) in out.iter_mut().zip(args[0]) {
                *o = relu(a);
            }
        }
        PrimKind::Reciprocal => {
            for (o, &a) in out.iter_mut().zip(args[0]) {
                *o = a.recip();
            }
        }
        PrimKind::ClampMin => {
            for (o, &a) in out.iter_mut().zip(args[0]) {
                *o = clamp_min(a, eps);
            }
        }
        PrimKind::Softmax if args.len() == 1 => {
            out.copy_from_slice(args[0]);
            softmax_in_place(out);
        }
        PrimKind::Softmax => softmax_across(args, out),
        PrimKind::WeightedSum => {
            let n = out.len();
            let w = args[0];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (i, x) in args[1..].iter().enumerate() {
                    acc = acc + w[i * n + j] * x[j];
                }
                *o = acc;
            }
        }
        PrimKind::Stack => {
            let n = args[0].len();
            for (i, x) in args.iter().enumerate() {
                out[i * n..(i + 1) * n].copy_from_slice(x);
            }
        }
    }
}

/// Elementwise kinds applied to `x` in place; `other` is the second
/// operand of `add`. Produces the same values as [`row_kernel`].
#[inline]
pub fn row_kernel_in_place<T: Element>(kind: PrimKind, eps: T, x: &mut [T], other: Option<&[T]>) {
    match kind {
        PrimKind::Add => {
            for (a, &b) in x.iter_mut().zip(other.expect("add has a second operand")) {
                *a = *a + b;
            }
        }
        PrimKind::Relu => x.iter_mut().for_each(|a| *a = relu(*a)),
        PrimKind::Reciprocal => x.iter_mut().for_each(|a| *a = a.recip()),
        PrimKind::ClampMin => x.iter_mut().for_each(|a| *a = clamp_min(*a, eps)),
        _ => unreachable!("{} is not an in-place kind", kind.name()),
    }
}

#[inline]
fn relu<T: Element>(a: T) -> T {
    if a > T::zero() {
        a
    } else {
        T::zero()
    }
}

#[inline]
fn clamp_min<T: Element>(a: T, eps: T) -> T {
    if a < eps {
        eps
    } else {
        a
    }
}

/// `out = x · w` for one row, `w` row-major `k × n`.
#[inline]
fn matmul_row<T: Element>(x: &[T], w: &[T], out: &mut [T]) {
    let n = out.len();
    out.iter_mut().for_each(|o| *o = T::zero());
    for (k, &a) in x.iter().enumerate() {
        let wr = &w[k * n..(k + 1) * n];
        for (o, &b) in out.iter_mut().zip(wr) {
            *o = *o + a * b;
        }
    }
}

#[inline]
fn softmax_in_place<T: Element>(x: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in x.iter_mut() {
        *v = *v / sum;
    }
}

/// Softmax over operands, independently per column: `out[i, j]` is the
/// weight of operand `i` at column `j`.
#[inline]
fn softmax_across<T: Element>(args: &[&[T]], out: &mut [T]) {
    let n = args[0].len();
    for j in 0..n {
        let max = args.iter().map(|x| x[j]).fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (i, x) in args.iter().enumerate() {
            let e = (x[j] - max).exp();
            out[i * n + j] = e;
            sum = sum + e;
        }
        for i in 0..args.len() {
            out[i * n + j] = out[i * n + j] / sum;
        }
    }
}

/// Runs one primitive over whole tensors.
pub fn run_kernel<T: Element>(
    kind: PrimKind,
    inputs: &[&Tensor<T>],
    attrs: &OpAttrs,
    rels: Option<&[RelationId]>,
) -> Result<Tensor<T>> {
    run_kernel_threaded(kind, inputs, attrs, rels, 1)
}

/// [`run_kernel`] with the batch split into contiguous row chunks across
/// `threads` workers.
pub fn run_kernel_threaded<T: Element>(
    kind: PrimKind,
    inputs: &[&Tensor<T>],
    attrs: &OpAttrs,
    rels: Option<&[RelationId]>,
    threads: usize,
) -> Result<Tensor<T>> {
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let batch = shapes.first().map_or(0, |s| s[0]);
    let plan = plan_kernel(kind, attrs, &shapes, batch)?;
    if plan.modes.contains(&ArgMode::Gathered) && rels.is_none_or(|r| r.len() != batch) {
        return Err(Error::Usage(format!("{} needs {batch} relation bindings", kind.name())));
    }
    let width = plan.out_width();
    let mut out_shape = vec![batch];
    out_shape.extend_from_slice(&plan.out_row);
    let mut out = Tensor::zeros(out_shape);
    let eps = T::from_f64(attrs.eps.unwrap_or(0.0));
    let threads = threads.max(1).min(batch.max(1));
    if threads == 1 || width == 0 {
        run_rows(kind, &plan, inputs, eps, rels, 0, out.data_mut())?;
    } else {
        let per = batch.div_ceil(threads);
        let plan = &plan;
        std::thread::scope(|scope| {
            let handles: Vec<_> = out
                .data_mut()
                .chunks_mut(per * width)
                .enumerate()
                .map(|(i, chunk)| scope.spawn(move || run_rows(kind, plan, inputs, eps, rels, i * per, chunk)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("kernel worker panicked"))
                .collect::<Result<Vec<()>>>()
        })?;
    }
    Ok(out)
}

/// Fills `out` with consecutive output rows starting at batch row `first`.
pub fn run_rows<T: Element>(
    kind: PrimKind,
    plan: &KernelPlan,
    inputs: &[&Tensor<T>],
    eps: T,
    rels: Option<&[RelationId]>,
    first: usize,
    out: &mut [T],
) -> Result<()> {
    let width = plan.out_width();
    let rows = out.len().checked_div(width).unwrap_or(0);
    let gathered = plan.modes.contains(&ArgMode::Gathered);
    let order = row_order(if gathered { rels } else { None }, first, rows);
    if blockable(kind, plan) {
        let key = |i: usize| if gathered { rels.map(|r| r[first + i]) } else { None };
        for run in weight_runs(&order, key) {
            let w = arg_slice(inputs[1], plan.modes[1], first + run[0], rels)?;
            let xs: Vec<&[T]> = run.iter().map(|&i| inputs[0].row(first + i)).collect();
            let mut outs = rows_mut(out, width, run);
            matmul_rows(&xs, w, &mut outs);
        }
        return Ok(());
    }
    let mut args: Vec<&[T]> = Vec::with_capacity(inputs.len());
    for i in order {
        args.clear();
        for (t, &mode) in inputs.iter().zip(&plan.modes) {
            args.push(arg_slice(t, mode, first + i, rels)?);
        }
        row_kernel(kind, eps, &args, &mut out[i * width..(i + 1) * width]);
    }
    Ok(())
}

/// Whether a matmul can use the blocked kernel: per-row activations
/// against one weight matrix per run of rows.
pub fn blockable(kind: PrimKind, plan: &KernelPlan) -> bool {
    kind == PrimKind::MatMul && plan.modes[0] == ArgMode::Row && plan.modes[1] != ArgMode::Row
}

/// Splits `order` into maximal runs with an equal weight key.
pub fn weight_runs<K: PartialEq>(order: &[usize], key: impl Fn(usize) -> K) -> Vec<&[usize]> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || key(order[i]) != key(order[start]) {
            if i > start {
                runs.push(&order[start..i]);
            }
            start = i;
        }
    }
    runs
}

/// Disjoint mutable rows of `buf` at ascending indices `idx`.
pub fn rows_mut<'a, T>(buf: &'a mut [T], width: usize, idx: &[usize]) -> Vec<&'a mut [T]> {
    let mut outs = Vec::with_capacity(idx.len());
    let mut rest = buf;
    let mut base = 0;
    for &i in idx {
        let tail = std::mem::take(&mut rest);
        let (_, tail) = tail.split_at_mut((i - base) * width);
        let (row, tail) = tail.split_at_mut(width);
        outs.push(row);
        rest = tail;
        base = i + 1;
    }
    outs
}

pub const MATMUL_ROWS: usize = 4;
const MATMUL_COLS: usize = 8;

/// `outs[i] = xs[i] · w` for rows sharing one `k × n` weight matrix.
/// Every output element accumulates over `k` ascending from zero, the same
/// order as the single-row kernel, so results match it bit for bit.
pub fn matmul_rows<T: Element>(xs: &[&[T]], w: &[T], outs: &mut [&mut [T]]) {
    let Some(first) = outs.first() else { return };
    let n = first.len();
    let kdim = xs[0].len();
    let mut r0 = 0;
    while r0 + MATMUL_ROWS <= xs.len() {
        let x: [&[T]; MATMUL_ROWS] = std::array::from_fn(|r| &xs[r0 + r][..kdim]);
        let mut c0 = 0;
        while c0 + MATMUL_COLS <= n {
            let mut acc = [[T::zero(); MATMUL_COLS]; MATMUL_ROWS];
            for k in 0..kdim {
                let wr = &w[k * n + c0..k * n + c0 + MATMUL_COLS];
                for r in 0..MATMUL_ROWS {
                    let a = x[r][k];
                    for c in 0..MATMUL_COLS {
                        acc[r][c] = acc[r][c] + a * wr[c];
                    }
                }
            }
            for r in 0..MATMUL_ROWS {
                outs[r0 + r][c0..c0 + MATMUL_COLS].copy_from_slice(&acc[r]);
            }
            c0 += MATMUL_COLS;
        }
        for r in 0..MATMUL_ROWS {
            for j in c0..n {
                let mut s = T::zero();
                for k in 0..kdim {
                    s = s + x[r][k] * w[k * n + j];
                }
                outs[r0 + r][j] = s;
            }
        }
        r0 += MATMUL_ROWS;
    }
    for r in r0..xs.len() {
        matmul_row(xs[r], w, outs[r]);
    }
}

/// Visiting order for `rows` rows starting at `first`: grouped by relation
/// when rows gather per-relation weights, so each table is read while it
/// is still cached. Rows are independent, so the order never changes
/// results.
pub fn row_order(rels: Option<&[RelationId]>, first: usize, rows: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows).collect();
    if let Some(r) = rels {
        order.sort_by_key(|&i| r[first + i]);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn t(shape: Vec<usize>, data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    fn run(kind: PrimKind, inputs: &[&Tensor<f64>]) -> Tensor<f64> {
        run_kernel(kind, inputs, &OpAttrs::default(), None).unwrap()
    }

    #[test]
    fn relu_values() {
        let out = run(PrimKind::Relu, &[&t(vec![1, 3], &[-1., 0., 2.])]);
        assert_eq!(out.data(), &[0., 0., 2.]);
    }

    #[test]
    fn softmax_symmetric() {
        let out = run(PrimKind::Softmax, &[&t(vec![1, 2], &[0., 0.])]);
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_across_operands() {
        let a = t(vec![1, 2], &[0., 1.]);
        let b = t(vec![1, 2], &[0., 1.]);
        let out = run(PrimKind::Softmax, &[&a, &b]);
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = run(PrimKind::MatMul, &[&t(vec![8, 8], &x), &t(vec![8, 8], &w)]);
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for k in 0..8 {
                    s += x[i * 8 + k] * w[k * 8 + j];
                }
                assert!((out.data()[i * 8 + j] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn blocked_matmul_is_bitwise_single_row() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (rows, k, n) = (7, 13, 19);
        let x: Vec<f64> = (0..rows * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xs: Vec<&[f64]> = x.chunks(k).collect();
        let mut blocked = vec![0.0; rows * n];
        let idx: Vec<usize> = (0..rows).collect();
        matmul_rows(&xs, &w, &mut rows_mut(&mut blocked, n, &idx));
        let mut single = vec![0.0; n];
        for r in 0..rows {
            matmul_row(xs[r], &w, &mut single);
            assert_eq!(&blocked[r * n..(r + 1) * n], &single[..]);
        }
    }

    #[test]
    fn runs_split_on_key_change() {
        let order = [0, 2, 1, 3];
        let key = |i: usize| i % 2;
        let runs = weight_runs(&order, key);
        assert_eq!(runs, vec![&[0, 2][..], &[1, 3][..]]);
        assert!(weight_runs(&[], key).is_empty());
    }

    #[test]
    fn gathered_matmul_uses_row_relation() {
        // two 1x1 relation "matrices": 2 and 3
        let table = t(vec![2, 1, 1], &[2., 3.]);
        let x = t(vec![2, 1], &[1., 1.]);
        let attrs = OpAttrs {
            rel_slot: Some(0),
            ..Default::default()
        };
        let out = run_kernel(PrimKind::MatMul, &[&x, &table], &attrs, Some(&[1, 0])).unwrap();
        assert_eq!(out.data(), &[3., 2.]);
        assert!(matches!(
            run_kernel(PrimKind::MatMul, &[&x, &table], &attrs, Some(&[5, 0])),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let err = run_kernel(
            PrimKind::MatMul,
            &[&t(vec![1, 3], &[0.; 3]), &t(vec![2, 2], &[0.; 4])],
            &OpAttrs::default(),
            None,
        );
        match err {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn add_broadcasts_bias() {
        let out = run(PrimKind::Add, &[&t(vec![2, 2], &[1., 2., 3., 4.]), &t(vec![2], &[10., 20.])]);
        assert_eq!(out.data(), &[11., 22., 13., 24.]);
    }

    #[test]
    fn weighted_sum_and_stack() {
        let w = t(vec![1, 2, 2], &[0.25, 1.0, 0.75, 0.0]);
        let a = t(vec![1, 2], &[4., 5.]);
        let b = t(vec![1, 2], &[8., 9.]);
        assert_eq!(run(PrimKind::WeightedSum, &[&w, &a, &b]).data(), &[7., 5.]);
        let s = run(PrimKind::Stack, &[&a, &b]);
        assert_eq!(s.shape(), &[1, 2, 2]);
        assert_eq!(s.data(), &[4., 5., 8., 9.]);
    }

    #[test]
    fn in_place_matches_out_of_place() {
        let x = [-0.5f64, 0.25, 3.0, 1e-9];
        let b = [1.0f64, -2.0, 0.5, 0.0];
        for kind in [PrimKind::Add, PrimKind::Relu, PrimKind::Reciprocal, PrimKind::ClampMin] {
            let mut out = [0.0; 4];
            let args: Vec<&[f64]> = if kind == PrimKind::Add { vec![&x, &b] } else { vec![&x] };
            row_kernel(kind, 1e-6, &args, &mut out);
            let mut y = x;
            row_kernel_in_place(kind, 1e-6, &mut y, Some(&b));
            assert_eq!(out, y, "{}", kind.name());
        }
    }
}
