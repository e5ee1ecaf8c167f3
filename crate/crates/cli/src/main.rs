use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgc_core::beta::{init_model, load_model, mrr, save_model, templates, ModelParams, Scorer};
use kgc_core::exec::{Element, ExecMode, ExecOptions, Executable};
use kgc_core::harness::{
    emit_report, read_bench_csv, render_markdown, report_from_rows, run_benchmark, BenchConfig, DatasetSource,
};
use kgc_core::ir::{to_dot, to_json, ElemKind};
use kgc_core::kg::{answer_oracle, load_triples, write_dataset, KnowledgeGraph, SyntheticSpec};
use kgc_core::pipeline::{answer_node, clause_embeddings, compile, BatchInputs, ParamTensors};
use kgc_core::query::{generate_queries, read_queries, write_queries, GroundedQuery, QueryRecord, ShapeTag};

#[derive(Parser)]
#[command(name = "kgc", version, about = "Compile, fuse and benchmark logical queries over knowledge graphs")]
struct Cli {
    #[arg(long, env = "KGC_SEED", default_value_t = 42, global = true)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Dtype::F64, global = true)]
    dtype: Dtype,
    #[arg(long, default_value_t = 1, global = true)]
    threads: usize,
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn kind(self) -> ElemKind {
        match self {
            Dtype::F32 => ElemKind::F32,
            Dtype::F64 => ElemKind::F64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unfused,
    Fused,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<ExecMode> {
        match self {
            ModeArg::Unfused => vec![ExecMode::Unfused],
            ModeArg::Fused => vec![ExecMode::Fused],
            ModeArg::Both => ExecMode::ALL.to_vec(),
        }
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory with train.txt, entities.dict and relations.dict.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    entities: usize,
    #[arg(long, default_value_t = 20)]
    relations: usize,
    #[arg(long, default_value_t = 2000)]
    triples: usize,
}

impl DataArgs {
    fn source(&self, seed: u64) -> DatasetSource {
        match &self.dataset {
            Some(dir) => DatasetSource::Files(dir.clone()),
            None => DatasetSource::Synthetic(SyntheticSpec {
                entities: self.entities,
                relations: self.relations,
                triples: self.triples,
                seed,
            }),
        }
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 64)]
    h: usize,
    /// Load weights saved by `--save-model` instead of initializing them.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl ModelArgs {
    fn params(&self, kg: &KnowledgeGraph, seed: u64) -> Result<ModelParams> {
        match &self.model {
            Some(path) => {
                let p = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
                if p.num_entities != kg.num_entities() || p.num_relations != kg.num_relations() {
                    bail!("model {} does not fit the dataset", path.display());
                }
                Ok(p)
            }
            None => Ok(init_model(kg, self.d, self.h, seed)),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Load a dataset (or build the synthetic one) and write it in canonical form.
    Ingest {
        #[arg(long, requires_all = ["entity_vocab", "relation_vocab"])]
        triples_file: Option<PathBuf>,
        #[arg(long)]
        entity_vocab: Option<PathBuf>,
        #[arg(long)]
        relation_vocab: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate grounded queries with their answers as JSON Lines.
    Genq {
        #[arg(long)]
        task: ShapeTag,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Compile one task and print its fusion report.
    Compile {
        #[arg(long)]
        task: ShapeTag,
        /// Write FOL and primitive graphs as DOT and JSON.
        #[arg(long)]
        dump: bool,
        /// Write the fused graph and the fusion report.
        #[arg(long)]
        dump_fused: bool,
        /// Write the template library as JSON.
        #[arg(long)]
        dump_templates: bool,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Execute one batch of queries and print counters and MRR per mode.
    Run {
        #[arg(long)]
        task: Option<ShapeTag>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Query file; all queries must share one shape.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Benchmark tasks across batch sizes in both modes.
    Bench {
        /// Comma-separated task tags.
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<ShapeTag>>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 16, 256, 1024])]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 64)]
        h: usize,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long)]
        tile_rows: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Rebuild report.md from an existing bench.csv.
    Report {
        /// Directory containing bench.csv.
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.cmd {
        Cmd::Ingest {
            triples_file,
            entity_vocab,
            relation_vocab,
            data,
        } => {
            let kg = match (triples_file, entity_vocab, relation_vocab) {
                (Some(t), Some(e), Some(r)) => load_triples(t, e, r)?,
                _ => data.source(cli.seed).load()?,
            };
            let files = write_dataset(&kg, &cli.out)?;
            println!(
                "{}",
                serde_json::json!({
                    "entities": kg.num_entities(),
                    "relations": kg.num_relations(),
                    "triples": kg.triples().len(),
                    "files": files,
                })
            );
        }
        Cmd::Genq { task, n, data } => {
            let kg = data.source(cli.seed).load()?;
            let qs = generate_queries(&kg, *task, *n, cli.seed)?;
            let recs = qs
                .iter()
                .map(|q| Ok(QueryRecord::from_query(q, Some(answer_oracle(&kg, q)?.into_iter().collect()))))
                .collect::<kgc_core::Result<Vec<_>>>()?;
            fs::create_dir_all(&cli.out)?;
            let path = cli.out.join(format!("queries-{task}.jsonl"));
            write_queries(&path, &recs)?;
            println!("wrote {} queries to {}", recs.len(), path.display());
        }
        Cmd::Compile {
            task,
            dump,
            dump_fused,
            dump_templates,
            data,
            model,
            save_model: save,
        } => {
            let kg = data.source(cli.seed).load()?;
            let p = model.params(&kg, cli.seed)?;
            let lib = templates(&p);
            let q = &generate_queries(&kg, *task, 1, cli.seed)?[0];
            let c = compile(q, &lib, cli.dtype.kind())?;
            if *dump || *dump_fused || *dump_templates || save.is_some() {
                fs::create_dir_all(&cli.out)?;
            }
            if *dump {
                write_graph(&cli.out, &format!("{task}.fol"), &c.fol)?;
                write_graph(&cli.out, &format!("{task}.primitive"), &c.modular.graph)?;
            }
            if *dump_fused {
                write_graph(&cli.out, &format!("{task}.fused"), &c.fused)?;
                fs::write(cli.out.join(format!("{task}.fusion.json")), serde_json::to_string_pretty(&c.report)?)?;
            }
            if *dump_templates {
                fs::write(cli.out.join("templates.json"), lib.to_json()?)?;
            }
            if let Some(path) = save {
                save_model(&p, path)?;
            }
            println!(
                "{task}: {} FOL ops, {} primitive ops, {} modules, {} fused ops",
                c.fol.num_ops(),
                c.modular.graph.num_ops(),
                c.modular.num_modules(),
                c.fused.num_ops()
            );
            for g in &c.report.groups {
                let members: Vec<String> = g.members.iter().map(ToString::to_string).collect();
                println!(
                    "  {}: {} [{}] {} steps{}",
                    g.op,
                    g.strategy.name(),
                    members.join(" "),
                    g.steps,
                    if g.absorbed { ", absorbed neighbours" } else { "" }
                );
            }
        }
        Cmd::Run {
            task,
            batch,
            queries,
            mode,
            data,
            model,
        } => {
            let kg = data.source(cli.seed).load()?;
            let p = model.params(&kg, cli.seed)?;
            let qs: Vec<GroundedQuery> = match (queries, task) {
                (Some(path), _) => read_queries(path)?
                    .iter()
                    .map(QueryRecord::to_query)
                    .collect::<kgc_core::Result<_>>()?,
                (None, Some(t)) => generate_queries(&kg, *t, *batch, cli.seed)?,
                (None, None) => bail!("either --task or --queries is required"),
            };
            if qs.is_empty() {
                bail!("no queries to run");
            }
            if qs.iter().any(|q| q.tag() != qs[0].tag()) {
                bail!("all queries in one run must share a shape");
            }
            let opts = ExecOptions {
                threads: cli.threads.max(1),
                ..ExecOptions::default()
            };
            match cli.dtype {
                Dtype::F32 => run_typed::<f32>(&kg, &p, &qs, &mode.modes(), &opts)?,
                Dtype::F64 => run_typed::<f64>(&kg, &p, &qs, &mode.modes(), &opts)?,
            }
        }
        Cmd::Bench {
            tasks,
            batches,
            d,
            h,
            rounds,
            warmup,
            tile_rows,
            data,
        } => {
            let defaults = BenchConfig::default();
            let cfg = BenchConfig {
                dataset: data.source(cli.seed),
                tasks: tasks.clone().unwrap_or_else(|| ShapeTag::ALL.to_vec()),
                batches: batches.clone(),
                d: *d,
                h: *h,
                rounds: *rounds,
                warmup: *warmup,
                seed: cli.seed,
                dtype: cli.dtype.kind(),
                threads: cli.threads.max(1),
                tile_rows: tile_rows.unwrap_or(defaults.tile_rows),
                ..defaults
            };
            let report = run_benchmark(&cfg)?;
            let files = emit_report(&report, &cli.out)?;
            print!("{}", render_markdown(&report));
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            if !report.parity_ok() {
                eprintln!("parity check failed");
                return Ok(ExitCode::from(2));
            }
            if !report.errors.is_empty() {
                return Ok(ExitCode::from(3));
            }
        }
        Cmd::Report { input } => {
            let rows = read_bench_csv(input.join("bench.csv"))?;
            let md = render_markdown(&report_from_rows(rows));
            fs::create_dir_all(&cli.out)?;
            fs::write(cli.out.join("report.md"), &md)?;
            print!("{md}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_graph(dir: &Path, stem: &str, g: &kgc_core::ir::ComputationGraph) -> Result<()> {
    fs::write(dir.join(format!("{stem}.dot")), to_dot(g, stem))?;
    fs::write(dir.join(format!("{stem}.json")), to_json(g)?)?;
    Ok(())
}

fn run_typed<T: Element>(
    kg: &KnowledgeGraph,
    p: &ModelParams,
    qs: &[GroundedQuery],
    modes: &[ExecMode],
    opts: &ExecOptions,
) -> Result<()> {
    let lib = templates(p);
    let params: ParamTensors<T> = ParamTensors::new(p)?;
    let c = compile(&qs[0], &lib, T::KIND)?;
    let inputs = BatchInputs::new(&params, qs)?;
    let scorer = Scorer::new(p);
    let answers: Vec<BTreeSet<u32>> = qs.iter().map(|q| answer_oracle(kg, q)).collect::<kgc_core::Result<_>>()?;
    for &mode in modes {
        let g = c.graph(mode);
        let exe = Executable::new(g, mode)?;
        let (out, stats) = exe.run(&inputs.bindings(g, &params)?, opts)?;
        let answer = &out[&answer_node(g)?];
        let ranks = clause_embeddings(answer)
            .iter()
            .map(|cl| scorer.rank(cl))
            .collect::<kgc_core::Result<Vec<_>>>()?;
        println!(
            "{}",
            serde_json::json!({
                "task": c.tag.to_string(),
                "mode": mode.name(),
                "batch": qs.len(),
                "launches": stats.kernel_launches,
                "interm_bytes": stats.interm_bytes,
                "peak_bytes": stats.peak_bytes,
                "wall_ns": stats.wall_ns,
                "non_finite": stats.non_finite,
                "mrr": mrr(&ranks, &answers)?,
            })
        );
    }
    Ok(())
}
