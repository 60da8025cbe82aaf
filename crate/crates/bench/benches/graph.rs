//! Ingestion and algorithm rounds on generated graphs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use tdorch_core::graph::algos::{bfs, pr};
use tdorch_core::graph::gen::gen_ba;
use tdorch_core::graph::io::doubled;
use tdorch_core::graph::{ingest, IngestConfig, Mode};

fn bench_ingest(c: &mut Criterion) {
    let pairs = gen_ba(5_000, 8, 2);
    let edges = doubled(&pairs);
    let mut group = c.benchmark_group("ingest");
    group.throughput(Throughput::Elements(edges.len() as u64));
    for p in [4usize, 8] {
        group.bench_with_input(BenchmarkId::new("ba5000", p), &p, |b, &p| {
            b.iter(|| ingest(edges.clone(), 5_000, &IngestConfig::new(p, 2)).unwrap());
        });
    }
    group.finish();
}

fn bench_algorithms(c: &mut Criterion) {
    let pairs = gen_ba(5_000, 8, 2);
    let edges = doubled(&pairs);
    let m = edges.len() as u64;
    let mut group = c.benchmark_group("algorithms");
    group.throughput(Throughput::Elements(m));
    group.bench_function("bfs_p8", |b| {
        b.iter_batched(
            || ingest(edges.clone(), 5_000, &IngestConfig::new(8, 2)).unwrap(),
            |mut gc| bfs(&mut gc, 0, Mode::Auto).unwrap().0,
            criterion::BatchSize::LargeInput,
        );
    });
    group.bench_function("pr5_p8", |b| {
        b.iter_batched(
            || ingest(edges.clone(), 5_000, &IngestConfig::new(8, 2)).unwrap(),
            |mut gc| pr(&mut gc, 5, 0.85, Mode::Auto).unwrap().0,
            criterion::BatchSize::LargeInput,
        );
    });
    group.finish();
}

criterion_group!(benches, bench_ingest, bench_algorithms);
criterion_main!(benches);
