use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use kgc_bench::workload;
use kgc_core::exec::{ExecMode, ExecOptions, Executable};
use kgc_core::query::ShapeTag;

fn modes(c: &mut Criterion) {
    let opts = ExecOptions::default();
    for tag in [ShapeTag::P1, ShapeTag::P3, ShapeTag::I2, ShapeTag::Pi, ShapeTag::Up, ShapeTag::Pni] {
        let mut group = c.benchmark_group(format!("execute/{tag}"));
        group.sample_size(20);
        for batch in [16usize, 256, 1024] {
            let w = workload::<f64>(tag, batch, 32, 64);
            group.throughput(Throughput::Elements(batch as u64));
            for mode in ExecMode::ALL {
                let g = w.compiled.graph(mode);
                let exe = Executable::new(g, mode).unwrap();
                let b = w.inputs.bindings(g, &w.params).unwrap();
                group.bench_with_input(BenchmarkId::new(mode.name(), batch), &b, |bench, b| {
                    bench.iter(|| exe.run(b, &opts).unwrap())
                });
            }
        }
        group.finish();
    }
}

criterion_group!(benches, modes);
criterion_main!(benches);
