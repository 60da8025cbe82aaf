//! Strategy throughput on Zipf workloads at a fixed machine count.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use tdorch_bench::{kv_cluster, zipf_tasks};
use tdorch_core::baselines::{run_strategy, Strategy};
use tdorch_core::kv::{kv_shard_partition, kv_spec};
use tdorch_core::orchestrate::StageOptions;

fn bench_strategies(c: &mut Criterion) {
    let p = 8;
    let per_machine = 2_000u64;
    let mut group = c.benchmark_group("orchestration");
    group.throughput(Throughput::Elements(p as u64 * per_machine));
    for gamma in [0.0, 2.0] {
        for strategy in Strategy::ALL {
            group.bench_with_input(
                BenchmarkId::new(strategy.name(), format!("gamma{gamma}")),
                &gamma,
                |b, &gamma| {
                    let tasks = zipf_tasks(p, gamma, per_machine, 7);
                    let owner = kv_shard_partition(1 << 20, p);
                    let spec = kv_spec(8, None);
                    b.iter(|| {
                        let mut cluster = kv_cluster(p, 7);
                        run_strategy(
                            strategy,
                            &mut cluster,
                            &owner,
                            tasks.clone(),
                            &spec,
                            &StageOptions::default(),
                        )
                        .unwrap()
                        .stats
                        .executed_tasks
                    });
                },
            );
        }
    }
    group.finish();
}

fn bench_hot_key(c: &mut Criterion) {
    let p = 8;
    let per_machine = 2_000u64;
    let mut group = c.benchmark_group("hot_key");
    group.throughput(Throughput::Elements(p as u64 * per_machine));
    group.bench_function("td_orch_f2", |b| {
        let tasks = tdorch_core::kv::gen_hot_key_tasks(42, per_machine, p, 3);
        let owner = kv_shard_partition(1 << 20, p);
        let spec = kv_spec(8, Some(2));
        b.iter(|| {
            let mut cluster = kv_cluster(p, 3);
            run_strategy(
                Strategy::TdOrch,
                &mut cluster,
                &owner,
                tasks.clone(),
                &spec,
                &StageOptions::default(),
            )
            .unwrap()
            .stats
            .executed_tasks
        });
    });
    group.finish();
}

criterion_group!(benches, bench_strategies, bench_hot_key);
criterion_main!(benches);
