use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dqlq_bench::{reference_noise, reference_system};
use dqlq_core::lq::{DEFAULT_ORACLE_MAX_ITER, DEFAULT_ORACLE_TOL};
use dqlq_core::{
    allocate_gains, build_graph, consensus_operator, distributed_round, expectation_map, realize,
    run_centralized, run_distributed, solve_oracle, DistributedOptions, GainMode, Initialization,
    QFactor, RoundNoise, Schedule, SensorBank, Topology,
};
use std::hint::black_box;

fn oracle(c: &mut Criterion) {
    let sys = reference_system();
    let noise = reference_noise();
    let g = QFactor::cost_weight(&sys);
    c.bench_function("expectation_map", |b| b.iter(|| expectation_map(black_box(&g), &sys, &noise)));
    c.bench_function("solve_oracle", |b| {
        b.iter(|| solve_oracle(black_box(&sys), &noise, DEFAULT_ORACLE_TOL, DEFAULT_ORACLE_MAX_ITER).unwrap())
    });
}

fn learners(c: &mut Criterion) {
    let sys = reference_system();
    let noise = reference_noise();
    let sched = Schedule::reference();
    c.bench_function("run_centralized/200", |b| {
        b.iter(|| run_centralized(&sys, &noise, &sched, 200, black_box(0), QFactor::cost_weight(&sys), None).unwrap())
    });

    let mut group = c.benchmark_group("distributed_round");
    for n in [4usize, 16, 64] {
        let graph = build_graph(&Topology::Ring(n)).unwrap();
        let cons = consensus_operator(&graph, None).unwrap();
        let alloc = allocate_gains(&graph, sys.n(), sys.m(), GainMode::Uniform);
        let real = realize(&sys, 1.0);
        let bank = SensorBank::initialize(&sys, n, Initialization::Spread, 0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter_batched(
                || bank.clone(),
                |mut bank| {
                    distributed_round(&mut bank, &cons, &alloc, RoundNoise::Shared(&real), &sched, sys.q(), sys.r())
                        .unwrap()
                },
                criterion::BatchSize::SmallInput,
            )
        });
    }
    group.finish();

    let graph = build_graph(&Topology::Ring(4)).unwrap();
    let cons = consensus_operator(&graph, None).unwrap();
    let alloc = allocate_gains(&graph, sys.n(), sys.m(), GainMode::Uniform);
    c.bench_function("run_distributed/ring4/200", |b| {
        b.iter(|| {
            run_distributed(&sys, &noise, &cons, &alloc, &sched, 200, black_box(0), DistributedOptions::default(), None)
                .unwrap()
        })
    });
}

criterion_group!(benches, oracle, learners);
criterion_main!(benches);
