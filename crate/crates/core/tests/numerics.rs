mod support;

use kgc_core::beta::{init_model, kl_beta, log_beta, templates, BetaEmbedding, EPS_MIN};
use kgc_core::exec::{execute, run_kernel, ExecMode, Tensor};
use kgc_core::ir::{ElemKind, OpAttrs, PrimKind};
use kgc_core::kg::{KnowledgeGraph, SyntheticSpec};
use kgc_core::pipeline::{answer_node, compile, BatchInputs, ParamTensors};
use kgc_core::query::{generate_queries, structure_of, GroundedQuery, ShapeTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{quad_kl, quad_log_beta};

#[test]
fn quadrature_reproduces_known_values() {
    assert!((quad_log_beta(2.0, 2.0) - (1.0f64 / 6.0).ln()).abs() < 1e-13);
    assert!(quad_log_beta(1.0, 1.0).abs() < 1e-13);
    assert!((quad_kl(1.0, 1.0, 2.0, 2.0) - (2.0 - 6.0f64.ln())).abs() < 1e-12);
}

#[test]
fn log_beta_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let (a, b) = (rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0));
        let err = (log_beta(a, b).unwrap() - quad_log_beta(a, b)).abs();
        assert!(err <= 1e-8, "log_beta({a}, {b}) off by {err}");
    }
}

#[test]
fn log_beta_accurate_on_wide_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let a = (rng.gen_range(0.05f64.ln()..50f64.ln())).exp();
        let b = (rng.gen_range(0.05f64.ln()..50f64.ln())).exp();
        worst = worst.max((log_beta(a, b).unwrap() - quad_log_beta(a, b)).abs());
    }
    assert!(worst <= 1e-10, "worst error {worst}");
}

#[test]
fn log_beta_symmetric_and_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (a, b) = (rng.gen_range(0.05..50.0), rng.gen_range(0.05..50.0));
        assert_eq!(log_beta(a, b).unwrap(), log_beta(b, a).unwrap());
    }
    assert!(log_beta(0.0, 1.0).is_err());
    assert!(log_beta(1.0, -2.0).is_err());
}

#[test]
fn kl_beta_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..100 {
        let p: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.1..10.0));
        let want = quad_kl(p[0], p[1], p[2], p[3]);
        let e = |a: f64, b: f64| BetaEmbedding::new(vec![a], vec![b]).unwrap();
        let got = kl_beta(&e(p[0], p[1]), &e(p[2], p[3])).unwrap();
        assert!((got - want).abs() <= 1e-8, "{p:?}: {got} vs {want}");
    }
}

#[test]
fn kl_beta_of_self_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let d = rng.gen_range(1..40);
        let alpha: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..20.0)).collect();
        let beta: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..20.0)).collect();
        let e = BetaEmbedding::new(alpha, beta).unwrap();
        let kl = kl_beta(&e, &e).unwrap();
        assert!((0.0..=1e-12).contains(&kl), "{kl}");
    }
}

fn kernel(kind: PrimKind, x: &Tensor<f64>, eps: Option<f64>) -> Tensor<f64> {
    let attrs = OpAttrs { eps, ..Default::default() };
    run_kernel(kind, &[x], &attrs, None).unwrap()
}

#[test]
fn double_negation_restores_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let data: Vec<f64> = (0..4096).map(|_| (rng.gen_range((EPS_MIN * 2.0).ln()..(0.5 / EPS_MIN).ln())).exp()).collect();
    let x = Tensor::new(vec![64, 64], data).unwrap();
    let not = |t: &Tensor<f64>| kernel(PrimKind::ClampMin, &kernel(PrimKind::Reciprocal, t, None), Some(EPS_MIN));
    let back = not(&not(&x));
    for (a, b) in x.data().iter().zip(back.data()) {
        // one rounding per reciprocal
        assert!((a - b).abs() <= 2.0 * f64::EPSILON * a.abs(), "{a} -> {b}");
    }
}

#[test]
fn intersection_weights_sum_to_one() {
    // identical branches: the weighted sum reproduces the branch exactly
    // up to rounding iff the attention weights sum to 1
    let kg = KnowledgeGraph::synthetic(SyntheticSpec::default()).unwrap();
    let p = init_model(&kg, 32, 64, 5);
    let lib = templates(&p);
    let params: ParamTensors<f64> = ParamTensors::new(&p).unwrap();
    let ones = generate_queries(&kg, ShapeTag::P1, 20, 8).unwrap();
    let twins: Vec<GroundedQuery> = ones
        .iter()
        .map(|q| GroundedQuery::new(structure_of(ShapeTag::I2), vec![q.anchors[0]; 2], vec![q.rels[0]; 2]).unwrap())
        .collect();
    let run = |qs: &[GroundedQuery]| {
        let c = compile(&qs[0], &lib, ElemKind::F64).unwrap();
        let g = c.graph(ExecMode::Unfused);
        let inputs = BatchInputs::new(&params, qs).unwrap();
        let (out, _) = execute(g, &inputs.bindings(g, &params).unwrap(), ExecMode::Unfused).unwrap();
        out[&answer_node(g).unwrap()].clone()
    };
    let (single, joined) = (run(&ones), run(&twins));
    for (a, b) in single.data().iter().zip(joined.data()) {
        assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
        assert!(*b >= EPS_MIN);
    }
}
