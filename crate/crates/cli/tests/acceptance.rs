//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fail.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use kgc_core::beta::{init_model, kl_beta, log_beta, mrr, templates, BetaEmbedding, ModelParams, Scorer};
use kgc_core::exec::{Element, ExecMode, ExecOptions, Executable, ExecutionStats, Tensor};
use kgc_core::harness::{run_benchmark, BenchConfig};
use kgc_core::ir::{capture, validate, ElemKind, GraphLevel};
use kgc_core::kg::{answer_oracle, KnowledgeGraph, SyntheticSpec};
use kgc_core::pattern::ModuleId;
use kgc_core::pipeline::{answer_node, clause_embeddings, compile, BatchInputs, ParamTensors};
use kgc_core::query::{generate_queries, to_dnf, GroundedQuery, ShapeTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/support/mod.rs"]
mod support;

use support::{all_paths, convex, is_bipartite, is_dag, max_rel_err, naive_answer, quad_kl, quad_log_beta, weakly_connected};

type Outcome = Result<String, String>;

const D: usize = 32;
const H: usize = 64;
const BATCHES: [usize; 4] = [1, 16, 256, 1024];

fn kg() -> KnowledgeGraph {
    KnowledgeGraph::synthetic(SyntheticSpec::default()).unwrap()
}

fn params() -> (KnowledgeGraph, ModelParams) {
    let g = kg();
    let p = init_model(&g, D, H, 42);
    (g, p)
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn answers_both<T: Element>(p: &ModelParams, qs: &[GroundedQuery]) -> Vec<Tensor<T>> {
    let lib = templates(p);
    let params: ParamTensors<T> = ParamTensors::new(p).unwrap();
    let c = compile(&qs[0], &lib, T::KIND).unwrap();
    let inputs = BatchInputs::new(&params, qs).unwrap();
    ExecMode::ALL
        .iter()
        .map(|&mode| {
            let g = c.graph(mode);
            let exe = Executable::new(g, mode).unwrap();
            let (out, _) = exe.run(&inputs.bindings(g, &params).unwrap(), &ExecOptions::default()).unwrap();
            out[&answer_node(g).unwrap()].clone()
        })
        .collect()
}

fn parity<T: Element>(g: &KnowledgeGraph, p: &ModelParams, tol: f64) -> Result<f64, String> {
    let scorer = Scorer::new(p);
    let mut worst: f64 = 0.0;
    for tag in ShapeTag::ALL {
        let qs = generate_queries(g, tag, 50, 100).map_err(|e| e.to_string())?;
        let answers: Vec<BTreeSet<u32>> = qs.iter().map(|q| answer_oracle(g, q).unwrap()).collect();
        let outs = answers_both::<T>(p, &qs);
        let err = max_rel_err(&outs[0], &outs[1]);
        worst = worst.max(err);
        ensure(err <= tol, format!("{tag}: max rel err {err:.3e} > {tol:e}"))?;
        let ranks: Vec<Vec<Vec<u32>>> = outs
            .iter()
            .map(|o| clause_embeddings(o).iter().map(|c| scorer.rank(c).unwrap()).collect())
            .collect();
        ensure(ranks[0] == ranks[1], format!("{tag}: rankings differ"))?;
        let (mu, mf) = (mrr(&ranks[0], &answers).unwrap(), mrr(&ranks[1], &answers).unwrap());
        ensure(mu == mf, format!("{tag}: MRR {mu} vs {mf}"))?;
    }
    Ok(worst)
}

fn c1_dual_mode() -> Outcome {
    let start = Instant::now();
    let (g, p) = params();
    let e64 = parity::<f64>(&g, &p, 1e-10)?;
    let e32 = parity::<f32>(&g, &p, 1e-5)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "14 tasks x 50 queries, worst rel err f64 {e64:.1e} f32 {e32:.1e}, rankings and MRR identical, {secs:.1}s"
    ))
}

#[derive(Debug, serde::Deserialize)]
struct Fixture {
    task: String,
    d: usize,
    h: usize,
    unfused_launches: u64,
    fused_launches: u64,
    unfused_interm_elems_per_row: u64,
    fused_interm_elems_per_row: u64,
}

fn fixtures() -> BTreeMap<String, Fixture> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/launches.csv");
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .map(|r: Result<Fixture, _>| {
            let f = r.unwrap();
            (f.task.clone(), f)
        })
        .collect()
}

type StatsTable = BTreeMap<(ShapeTag, ExecMode, usize), ExecutionStats>;

fn measure() -> StatsTable {
    let (g, p) = params();
    let lib = templates(&p);
    let params: ParamTensors<f64> = ParamTensors::new(&p).unwrap();
    let mut out = BTreeMap::new();
    for tag in ShapeTag::ALL {
        let qs = generate_queries(&g, tag, 1024, 5).unwrap();
        let c = compile(&qs[0], &lib, ElemKind::F64).unwrap();
        for mode in ExecMode::ALL {
            let graph = c.graph(mode);
            let exe = Executable::new(graph, mode).unwrap();
            for b in BATCHES {
                let inputs = BatchInputs::new(&params, &qs[..b]).unwrap();
                let (_, s) = exe.run(&inputs.bindings(graph, &params).unwrap(), &ExecOptions::default()).unwrap();
                out.insert((tag, mode, b), s);
            }
        }
    }
    out
}

fn c2_launches(stats: &StatsTable) -> Outcome {
    let fx = fixtures();
    ensure(fx.len() == 14, format!("fixture has {} rows", fx.len()))?;
    for tag in ShapeTag::ALL {
        let f = &fx[tag.as_str()];
        ensure((f.d, f.h) == (D, H), "fixture dimensions differ")?;
        for b in BATCHES {
            let u = stats[&(tag, ExecMode::Unfused, b)].kernel_launches;
            let z = stats[&(tag, ExecMode::Fused, b)].kernel_launches;
            ensure(
                (u, z) == (f.unfused_launches, f.fused_launches),
                format!("{tag} batch {b}: {u}->{z}, fixture {}->{}", f.unfused_launches, f.fused_launches),
            )?;
        }
    }
    let l = |t, m| stats[&(t, m, 1)].kernel_launches;
    let spots = [(ShapeTag::P1, 10), (ShapeTag::P2, 20), (ShapeTag::I2, 32)];
    for (t, want) in spots {
        ensure(
            l(t, ExecMode::Unfused) == want && l(t, ExecMode::Fused) == 1,
            format!("{t}: {}->{}", l(t, ExecMode::Unfused), l(t, ExecMode::Fused)),
        )?;
    }
    Ok("all 14 tasks match the fixture at every batch; 1p 10->1, 2p 20->1, 2i 32->1".into())
}

fn c3_memory(stats: &StatsTable) -> Outcome {
    let fx = fixtures();
    for tag in ShapeTag::ALL {
        let f = &fx[tag.as_str()];
        for b in BATCHES {
            let u = &stats[&(tag, ExecMode::Unfused, b)];
            let z = &stats[&(tag, ExecMode::Fused, b)];
            ensure(z.interm_bytes == 0 && u.interm_bytes > 0, format!("{tag} b={b}: interm {} / {}", u.interm_bytes, z.interm_bytes))?;
            ensure(
                u.interm_bytes == f.unfused_interm_elems_per_row * 8 * b as u64
                    && z.interm_bytes == f.fused_interm_elems_per_row * 8 * b as u64,
                format!("{tag} b={b}: interm bytes differ from fixture"),
            )?;
            ensure(
                z.peak_bytes <= u.peak_bytes,
                format!("{tag} b={b}: fused peak {} > unfused {}", z.peak_bytes, u.peak_bytes),
            )?;
            for m in ExecMode::ALL {
                let (s, one) = (&stats[&(tag, m, b)], &stats[&(tag, m, 1)]);
                ensure(
                    s.interm_bytes == one.interm_bytes * b as u64 && s.peak_bytes == one.peak_bytes * b as u64,
                    format!("{tag} {m} b={b}: not linear in batch"),
                )?;
            }
        }
    }
    let ratio = |t| {
        let u = stats[&(t, ExecMode::Unfused, 1024)].peak_bytes as f64;
        stats[&(t, ExecMode::Fused, 1024)].peak_bytes as f64 / u
    };
    Ok(format!(
        "fused interm 0 everywhere, peak fused/unfused at 1024: 1p {:.2}, 3p {:.2}, pi {:.2}; exact linearity",
        ratio(ShapeTag::P1),
        ratio(ShapeTag::P3),
        ratio(ShapeTag::Pi)
    ))
}

fn c4_speedup() -> Outcome {
    let cfg = BenchConfig {
        batches: vec![1024],
        ..BenchConfig::default()
    };
    let r = run_benchmark(&cfg).map_err(|e| e.to_string())?;
    let per_task: Vec<String> = r.speedups.iter().map(|s| format!("{} {:.2}", s.task, s.speedup)).collect();
    let slower: Vec<&str> = r.speedups.iter().filter(|s| s.speedup < 1.0).map(|s| s.task.as_str()).collect();
    let avg = r.avg_speedup(1024).unwrap_or(0.0);
    let detail = format!("geomean {avg:.3} (need >= 1.2); {}", per_task.join(", "));
    if slower.is_empty() && avg >= 1.2 {
        Ok(detail)
    } else {
        Err(format!("{detail}; fused slower on [{}]", slower.join(" ")))
    }
}

fn c5_oracle() -> Outcome {
    let g = kg();
    for tag in ShapeTag::ALL {
        for q in generate_queries(&g, tag, 50, 3).map_err(|e| e.to_string())? {
            let got = answer_oracle(&g, &q).unwrap();
            ensure(got == naive_answer(&g, &q), format!("{tag}: oracle disagrees on {q:?}"))?;
        }
    }
    for tag in [ShapeTag::U2, ShapeTag::Up] {
        for q in generate_queries(&g, tag, 50, 9).map_err(|e| e.to_string())? {
            let dnf = to_dnf(&q).unwrap();
            ensure(dnf.evaluate(&g).unwrap() == answer_oracle(&g, &q).unwrap(), format!("{tag}: DNF changes answers"))?;
        }
    }
    Ok("700 queries equal the naive evaluator; DNF of 2u/up preserves answers on 100 queries".into())
}

fn c6_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut lb, mut kl) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let v: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.1..10.0));
        lb = lb.max((log_beta(v[0], v[1]).unwrap() - quad_log_beta(v[0], v[1])).abs());
        let e = |a: f64, b: f64| BetaEmbedding::new(vec![a], vec![b]).unwrap();
        kl = kl.max((kl_beta(&e(v[0], v[1]), &e(v[2], v[3])).unwrap() - quad_kl(v[0], v[1], v[2], v[3])).abs());
    }
    ensure(lb <= 1e-8 && kl <= 1e-8, format!("worst error log_beta {lb:.2e}, kl_beta {kl:.2e}"))?;
    let mut self_kl = 0.0f64;
    for _ in 0..100 {
        let d = rng.gen_range(1..64);
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..10.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..10.0)).collect();
        let e = BetaEmbedding::new(a, b).unwrap();
        self_kl = self_kl.max(kl_beta(&e, &e).unwrap());
    }
    ensure(self_kl <= 1e-12, format!("kl(e, e) reached {self_kl:e}"))?;
    Ok(format!("worst error log_beta {lb:.1e}, kl_beta {kl:.1e}; max kl(e,e) {self_kl:e}"))
}

fn c7_ir() -> Outcome {
    let g = kg();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let tag = ShapeTag::ALL[i % 14];
        let q = &generate_queries(&g, tag, 1, rng.gen()).map_err(|e| e.to_string())?[0];
        let graph = capture(q).unwrap();
        ensure(validate(&graph).is_empty(), format!("{tag}: {:?}", validate(&graph)))?;
    }
    let lib = templates(&init_model(&g, 8, 16, 1));
    let mut groups = 0;
    for tag in ShapeTag::ALL {
        let q = &generate_queries(&g, tag, 1, 2).unwrap()[0];
        let c = compile(q, &lib, ElemKind::F64).unwrap();
        let f = &c.fused;
        ensure(
            f.level == GraphLevel::Fused && validate(f).is_empty() && is_bipartite(f) && is_dag(f),
            format!("{tag}: fused graph invalid"),
        )?;
        let paths = all_paths(&c.modular);
        let mut seen = BTreeSet::new();
        for grp in &c.groups {
            let members: BTreeSet<ModuleId> = grp.members.iter().copied().collect();
            ensure(convex(&paths, &members), format!("{tag}: group {:?} not convex", grp.members))?;
            ensure(weakly_connected(&c.modular, &members), format!("{tag}: group disconnected"))?;
            ensure(members.iter().all(|m| seen.insert(*m)), format!("{tag}: overlapping groups"))?;
            groups += 1;
        }
        ensure(seen.len() == c.modular.num_modules(), format!("{tag}: groups miss modules"))?;
    }
    Ok(format!("1000 captured queries validate; 14 fused graphs are bipartite DAGs; {groups} groups convex"))
}

fn bench_once(dir: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_kgc"))
        .args(["--seed", "42", "--out"])
        .arg(dir)
        .arg("bench")
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    ensure(status.success(), format!("kgc bench exited with {status}"))
}

/// CSV contents with the named columns removed.
fn strip(path: &Path, drop: &[&str]) -> Result<Vec<Vec<String>>, String> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let rows: Vec<Vec<String>> = rd
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let keep: Vec<usize> = match rows.first() {
        Some(h) => (0..h.len()).filter(|&i| !drop.contains(&h[i].as_str())).collect(),
        None => return Ok(rows),
    };
    Ok(rows.into_iter().map(|r| keep.iter().map(|&i| r[i].clone()).collect()).collect())
}

fn c8_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    for d in &dirs {
        bench_once(d)?;
    }
    let wall = ["wall_ns_median", "wall_ns_mean"];
    let mut rows = 0;
    for file in ["bench.csv", "memory.csv", "mrr.csv"] {
        let a = strip(&dirs[0].join(file), &wall)?;
        let b = strip(&dirs[1].join(file), &wall)?;
        ensure(a == b, format!("{file} differs between runs"))?;
        rows += a.len().saturating_sub(1);
    }
    for file in ["memory.csv", "mrr.csv"] {
        let a = std::fs::read(dirs[0].join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].join(file)).map_err(|e| e.to_string())?;
        ensure(a == b, format!("{file} not byte-identical"))?;
    }
    Ok(format!("two default `kgc bench` runs agree on {rows} CSV rows outside the wall-clock columns"))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> (String, bool) {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    let secs = start.elapsed().as_secs_f64();
    match out {
        Ok(d) => (format!("PASS  {name}: {d} [{secs:.1}s]"), true),
        Err(d) => (format!("FAIL  {name}: {d} [{secs:.1}s]"), false),
    }
}

fn main() -> ExitCode {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |n: &str| only.is_empty() || only.iter().any(|o| o == n);
    let mut results: BTreeMap<&str, (String, bool)> = BTreeMap::new();
    // timing first, before the heavier checks warm the machine
    if want("c4") {
        results.insert("c4", run("C4 speedup direction", c4_speedup));
    }
    if want("c1") {
        results.insert("c1", run("C1 dual-mode equivalence", c1_dual_mode));
    }
    if want("c2") || want("c3") {
        let stats = measure();
        if want("c2") {
            results.insert("c2", run("C2 kernel-launch reduction", || c2_launches(&stats)));
        }
        if want("c3") {
            results.insert("c3", run("C3 memory reduction", || c3_memory(&stats)));
        }
    }
    if want("c5") {
        results.insert("c5", run("C5 oracle correctness", c5_oracle));
    }
    if want("c6") {
        results.insert("c6", run("C6 numerical kernels", c6_numerics));
    }
    if want("c7") {
        results.insert("c7", run("C7 IR invariants", c7_ir));
    }
    if want("c8") {
        results.insert("c8", run("C8 determinism", c8_determinism));
    }
    for (line, _) in results.values() {
        println!("{line}");
    }
    let failed = results.values().filter(|(_, ok)| !ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
