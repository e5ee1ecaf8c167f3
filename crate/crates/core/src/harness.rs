//! Benchmark runner and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beta::{init_model, mrr, templates, ModelParams, Scorer};
use crate::error::{Error, Result};
use crate::exec::{Element, ExecMode, ExecOptions, Executable, ExecutionStats, Tensor};
use crate::ir::ElemKind;
use crate::kg::{answer_oracle, load_triples, EntityId, EntitySet, KnowledgeGraph, SyntheticSpec};
use crate::pipeline::{answer_node, clause_embeddings, compile, BatchInputs, ParamTensors};
use crate::query::{generate_queries, GroundedQuery, ShapeTag};

pub const BENCH_HEADER: [&str; 10] = [
    "dataset",
    "model",
    "task",
    "mode",
    "batch",
    "launches",
    "interm_bytes",
    "peak_bytes",
    "wall_ns_median",
    "wall_ns_mean",
];

pub const MODEL_NAME: &str = "beta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Directory holding `train.txt`, `entities.dict` and `relations.dict`.
    Files(PathBuf),
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Synthetic(_) => "synthetic".into(),
            DatasetSource::Files(dir) => dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
        }
    }

    pub fn load(&self) -> Result<KnowledgeGraph> {
        match self {
            DatasetSource::Synthetic(spec) => KnowledgeGraph::synthetic(*spec),
            DatasetSource::Files(dir) => load_triples(
                dir.join("train.txt"),
                dir.join("entities.dict"),
                dir.join("relations.dict"),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dataset: DatasetSource,
    pub tasks: Vec<ShapeTag>,
    pub batches: Vec<usize>,
    pub d: usize,
    pub h: usize,
    pub rounds: usize,
    pub warmup: usize,
    pub modes: Vec<ExecMode>,
    pub seed: u64,
    pub dtype: ElemKind,
    pub threads: usize,
    /// Rows per scratch tile in fused kernels.
    pub tile_rows: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            tasks: ShapeTag::ALL.to_vec(),
            batches: vec![1, 16, 256, 1024],
            d: 32,
            h: 64,
            rounds: 5,
            warmup: 1,
            modes: ExecMode::ALL.to_vec(),
            seed: 42,
            dtype: ElemKind::F64,
            threads: 1,
            tile_rows: ExecOptions::default().tile_rows,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batches.contains(&0) {
            return Err(Error::Usage("batch sizes must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Usage("rounds must be at least 1".into()));
        }
        if self.d == 0 || self.h == 0 {
            return Err(Error::Usage("d and h must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Usage("at least one mode is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dataset: String,
    pub model: String,
    pub task: String,
    pub mode: String,
    pub batch: usize,
    pub launches: u64,
    pub interm_bytes: u64,
    pub peak_bytes: u64,
    pub wall_ns_median: u64,
    pub wall_ns_mean: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrrRow {
    pub dataset: String,
    pub model: String,
    pub task: String,
    pub batch: usize,
    pub mode: String,
    pub queries: usize,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub task: String,
    pub batch: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub rankings_identical: bool,
    pub mrr_equal: bool,
}

impl ParityRow {
    pub fn ok(&self) -> bool {
        self.max_rel_err <= self.tolerance && self.rankings_identical && self.mrr_equal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub task: String,
    pub batch: usize,
    pub speedup: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub tasks: Vec<String>,
    pub batches: Vec<usize>,
    pub rows: Vec<BenchRow>,
    pub mrr: Vec<MrrRow>,
    pub parity: Vec<ParityRow>,
    pub speedups: Vec<SpeedupRow>,
    /// Generation or execution failures, one line each.
    pub errors: Vec<String>,
}

impl BenchReport {
    pub fn parity_ok(&self) -> bool {
        self.parity.iter().all(ParityRow::ok)
    }

    /// Geometric mean of the speedups at `batch` over the tasks run.
    pub fn avg_speedup(&self, batch: usize) -> Option<f64> {
        let v: Vec<f64> = self.speedups.iter().filter(|s| s.batch == batch).map(|s| s.speedup).collect();
        if v.is_empty() {
            return None;
        }
        Some((v.iter().map(|s| s.ln()).sum::<f64>() / v.len() as f64).exp())
    }

    pub fn row(&self, task: &str, mode: ExecMode, batch: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.mode == mode.name() && r.batch == batch)
    }
}

fn median(v: &mut [u64]) -> u64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Seed of the query stream for one task, so task subsets reproduce the
/// same queries.
fn task_seed(seed: u64, tag: ShapeTag) -> u64 {
    let idx = ShapeTag::ALL.iter().position(|t| *t == tag).expect("known tag") as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(idx + 1)
}

/// Results of executing one batch in one mode.
pub struct ModeRun<T> {
    pub answer: Tensor<T>,
    pub stats: ExecutionStats,
    pub walls: Vec<u64>,
}

/// Executes `queries` in `mode` for `warmup + rounds` rounds.
pub fn time_mode<T: Element>(
    compiled: &crate::pipeline::Compiled,
    params: &ParamTensors<T>,
    queries: &[GroundedQuery],
    mode: ExecMode,
    rounds: usize,
    warmup: usize,
    opts: &ExecOptions,
) -> Result<ModeRun<T>> {
    let g = compiled.graph(mode);
    let exe = Executable::new(g, mode)?;
    let inputs = BatchInputs::new(params, queries)?;
    let b = inputs.bindings(g, params)?;
    let ans = answer_node(g)?;
    for _ in 0..warmup {
        exe.run(&b, opts)?;
    }
    let mut walls = Vec::with_capacity(rounds);
    let mut last = None;
    for _ in 0..rounds.max(1) {
        let (mut out, stats) = exe.run(&b, opts)?;
        walls.push(stats.wall_ns);
        if let Some((prev, _)) = &last {
            if *prev != stats.kernel_launches {
                return Err(Error::Integrity("launch count changed between rounds".into()));
            }
        }
        last = Some((stats.kernel_launches, (out.remove(&ans).expect("answer computed"), stats)));
    }
    let (_, (answer, stats)) = last.expect("at least one round");
    Ok(ModeRun { answer, stats, walls })
}

fn max_rel_err<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            if x == y {
                0.0
            } else {
                (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE)
            }
        })
        .fold(0.0, f64::max)
}

/// Ranks every row of an answer tensor.
pub fn rank_rows<T: Element>(scorer: &Scorer, answer: &Tensor<T>) -> Result<Vec<Vec<EntityId>>> {
    clause_embeddings(answer).iter().map(|c| scorer.rank(c)).collect()
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let kg = cfg.dataset.load()?;
    let params = init_model(&kg, cfg.d, cfg.h, cfg.seed);
    match cfg.dtype {
        ElemKind::F32 => run_typed::<f32>(cfg, &kg, &params),
        ElemKind::F64 => run_typed::<f64>(cfg, &kg, &params),
    }
}

fn run_typed<T: Element>(cfg: &BenchConfig, kg: &KnowledgeGraph, p: &ModelParams) -> Result<BenchReport> {
    let dataset = cfg.dataset.name();
    let lib = templates(p);
    let params: ParamTensors<T> = ParamTensors::new(p)?;
    let scorer = Scorer::new(p);
    let opts = ExecOptions {
        threads: cfg.threads.max(1),
        tile_rows: cfg.tile_rows.max(1),
    };
    let tolerance = match T::KIND {
        ElemKind::F32 => 1e-5,
        ElemKind::F64 => 1e-10,
    };
    let max_batch = cfg.batches.iter().copied().max().unwrap_or(0);
    let mut report = BenchReport {
        tasks: cfg.tasks.iter().map(|t| t.to_string()).collect(),
        batches: cfg.batches.clone(),
        ..BenchReport::default()
    };
    for &tag in &cfg.tasks {
        let queries = match generate_queries(kg, tag, max_batch, task_seed(cfg.seed, tag)) {
            Ok(q) => q,
            Err(e) => {
                report.errors.push(format!("{tag}: {e}"));
                continue;
            }
        };
        if queries.is_empty() {
            continue;
        }
        let answers: Vec<EntitySet> = queries.iter().map(|q| answer_oracle(kg, q)).collect::<Result<_>>()?;
        let compiled = compile(&queries[0], &lib, T::KIND)?;
        for &batch in &cfg.batches {
            let qs = &queries[..batch];
            let mut runs: BTreeMap<ExecMode, ModeRun<T>> = BTreeMap::new();
            for &mode in &cfg.modes {
                let mut run = time_mode(&compiled, &params, qs, mode, cfg.rounds, cfg.warmup, &opts)?;
                let mean = run.walls.iter().sum::<u64>() / run.walls.len() as u64;
                report.rows.push(BenchRow {
                    dataset: dataset.clone(),
                    model: MODEL_NAME.into(),
                    task: tag.to_string(),
                    mode: mode.name().into(),
                    batch,
                    launches: run.stats.kernel_launches,
                    interm_bytes: run.stats.interm_bytes,
                    peak_bytes: run.stats.peak_bytes,
                    wall_ns_median: median(&mut run.walls),
                    wall_ns_mean: mean,
                });
                runs.insert(mode, run);
            }
            let mut rankings = BTreeMap::new();
            for (mode, run) in &runs {
                let ranks = rank_rows(&scorer, &run.answer)?;
                let value = mrr(&ranks, &answers[..batch])?;
                report.mrr.push(MrrRow {
                    dataset: dataset.clone(),
                    model: MODEL_NAME.into(),
                    task: tag.to_string(),
                    batch,
                    mode: mode.name().into(),
                    queries: batch,
                    mrr: value,
                });
                rankings.insert(*mode, (ranks, value));
            }
            if let (Some(u), Some(f)) = (runs.get(&ExecMode::Unfused), runs.get(&ExecMode::Fused)) {
                let (ru, mu) = &rankings[&ExecMode::Unfused];
                let (rf, mf) = &rankings[&ExecMode::Fused];
                report.parity.push(ParityRow {
                    task: tag.to_string(),
                    batch,
                    max_rel_err: max_rel_err(&u.answer, &f.answer),
                    tolerance,
                    rankings_identical: ru == rf,
                    mrr_equal: mu == mf,
                });
                let med = |m: ExecMode| {
                    report
                        .row(&tag.to_string(), m, batch)
                        .map(|r| r.wall_ns_median.max(1) as f64)
                        .expect("row just pushed")
                };
                report.speedups.push(SpeedupRow {
                    task: tag.to_string(),
                    batch,
                    speedup: med(ExecMode::Unfused) / med(ExecMode::Fused),
                });
            }
        }
    }
    Ok(report)
}

fn write_csv<S: Serialize>(path: &Path, header: &[&str], rows: &[S]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Integrity(format!("csv: {other:?}")),
    }
}

#[derive(Serialize)]
struct MemoryRow<'a> {
    dataset: &'a str,
    model: &'a str,
    task: &'a str,
    mode: &'a str,
    batch: usize,
    interm_bytes: u64,
    peak_bytes: u64,
}

/// Markdown table with one column per task and the geometric-mean
/// speedup, one row per batch size.
pub fn render_markdown(r: &BenchReport) -> String {
    let mut s = String::from("# Fused vs unfused\n\nSpeedup = unfused median / fused median wall time.\n\n");
    s.push_str("| batch |");
    for t in &r.tasks {
        s.push_str(&format!(" {t} |"));
    }
    s.push_str(" AVG_speedup |\n|---|");
    for _ in &r.tasks {
        s.push_str("---|");
    }
    s.push_str("---|\n");
    for &b in &r.batches {
        s.push_str(&format!("| {b} |"));
        for t in &r.tasks {
            match r.speedups.iter().find(|x| &x.task == t && x.batch == b) {
                Some(x) => s.push_str(&format!(" {:.2} |", x.speedup)),
                None => s.push_str(" - |"),
            }
        }
        match r.avg_speedup(b) {
            Some(a) => s.push_str(&format!(" {a:.2} |\n")),
            None => s.push_str(" - |\n"),
        }
    }
    s.push_str("\n## Kernel launches (unfused -> fused)\n\n| batch |");
    for t in &r.tasks {
        s.push_str(&format!(" {t} |"));
    }
    s.push_str("\n|---|");
    for _ in &r.tasks {
        s.push_str("---|");
    }
    s.push('\n');
    for &b in &r.batches {
        s.push_str(&format!("| {b} |"));
        for t in &r.tasks {
            let l = |m| r.row(t, m, b).map(|x| x.launches.to_string()).unwrap_or_else(|| "-".into());
            s.push_str(&format!(" {} -> {} |", l(ExecMode::Unfused), l(ExecMode::Fused)));
        }
        s.push('\n');
    }
    if !r.parity.is_empty() {
        let bad = r.parity.iter().filter(|p| !p.ok()).count();
        s.push_str(&format!("\nParity checks: {} run, {bad} failed.\n", r.parity.len()));
    }
    if !r.errors.is_empty() {
        s.push_str("\n## Errors\n\n");
        for e in &r.errors {
            s.push_str(&format!("- {e}\n"));
        }
    }
    s
}

/// Writes `bench.csv`, `report.md`, `memory.csv` and `mrr.csv` into `dir`.
pub fn emit_report(r: &BenchReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let bench = dir.join("bench.csv");
    write_csv(&bench, &BENCH_HEADER, &r.rows)?;
    let memory = dir.join("memory.csv");
    let mem_rows: Vec<MemoryRow> = r
        .rows
        .iter()
        .map(|x| MemoryRow {
            dataset: &x.dataset,
            model: &x.model,
            task: &x.task,
            mode: &x.mode,
            batch: x.batch,
            interm_bytes: x.interm_bytes,
            peak_bytes: x.peak_bytes,
        })
        .collect();
    write_csv(
        &memory,
        &["dataset", "model", "task", "mode", "batch", "interm_bytes", "peak_bytes"],
        &mem_rows,
    )?;
    let mrr_path = dir.join("mrr.csv");
    write_csv(&mrr_path, &["dataset", "model", "task", "batch", "mode", "queries", "mrr"], &r.mrr)?;
    let md = dir.join("report.md");
    fs::write(&md, render_markdown(r))?;
    Ok(vec![bench, md, memory, mrr_path])
}

/// Reads a `bench.csv` back into rows.
pub fn read_bench_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != BENCH_HEADER {
        return Err(Error::Integrity(format!("unexpected bench.csv header {header:?}")));
    }
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Rebuilds the speedup view of a report from its rows.
pub fn report_from_rows(rows: Vec<BenchRow>) -> BenchReport {
    let mut tasks: Vec<String> = Vec::new();
    let mut batches: Vec<usize> = Vec::new();
    for r in &rows {
        if !tasks.contains(&r.task) {
            tasks.push(r.task.clone());
        }
        if !batches.contains(&r.batch) {
            batches.push(r.batch);
        }
    }
    let mut report = BenchReport {
        tasks,
        batches,
        rows,
        ..BenchReport::default()
    };
    for t in report.tasks.clone() {
        for &b in &report.batches.clone() {
            if let (Some(u), Some(f)) = (report.row(&t, ExecMode::Unfused, b), report.row(&t, ExecMode::Fused, b)) {
                let speedup = u.wall_ns_median.max(1) as f64 / f.wall_ns_median.max(1) as f64;
                report.speedups.push(SpeedupRow { task: t.clone(), batch: b, speedup });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            tasks: vec![ShapeTag::P2],
            batches: vec![1, 4],
            d: 4,
            h: 8,
            rounds: 2,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn two_p_row_counts() {
        let r = run_benchmark(&small()).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.row("2p", ExecMode::Unfused, 1).unwrap().launches, 20);
        assert_eq!(r.row("2p", ExecMode::Fused, 1).unwrap().launches, 1);
        assert!(r.parity_ok());
    }

    #[test]
    fn emitted_csv_round_trips() {
        let r = run_benchmark(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        assert_eq!(read_bench_csv(dir.path().join("bench.csv")).unwrap(), r.rows);
        let mut rd = csv::Reader::from_path(dir.path().join("mrr.csv")).unwrap();
        let back: Vec<MrrRow> = rd.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(back, r.mrr);
    }

    #[test]
    fn empty_task_list_writes_headers_only() {
        let cfg = BenchConfig {
            tasks: vec![],
            ..small()
        };
        let r = run_benchmark(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        let bench = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
        assert_eq!(bench.trim_end(), BENCH_HEADER.join(","));
        let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.contains("| batch | AVG_speedup |"));
    }

    #[test]
    fn markdown_has_task_columns() {
        let mut r = BenchReport {
            tasks: ShapeTag::ALL.iter().map(|t| t.to_string()).collect(),
            batches: vec![1],
            ..BenchReport::default()
        };
        for t in ShapeTag::ALL {
            r.speedups.push(SpeedupRow {
                task: t.to_string(),
                batch: 1,
                speedup: 2.0,
            });
        }
        let md = render_markdown(&r);
        let header = md.lines().find(|l| l.starts_with("| batch")).unwrap();
        assert_eq!(header.matches('|').count(), 14 + 3);
        assert!(header.contains("AVG_speedup"));
        assert!(md.contains("| 1 | 2.00 |"));
        assert!(md.contains(" 2.00 |\n"));
    }
}
