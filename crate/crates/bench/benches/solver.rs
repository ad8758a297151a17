use criterion::{criterion_group, criterion_main, Criterion};
use relaydex::whittle::{build_table, index};
use relaydex::{solver, WhittleConfig};
use relaydex_bench::deep_buffer_relay;
use std::hint::black_box;

fn bench_threshold_solve(c: &mut Criterion) {
    let relay = deep_buffer_relay();
    c.bench_function("threshold_value_solve_k500", |b| {
        b.iter(|| {
            solver::solve_threshold_system(black_box(&relay), black_box(0.5), black_box(250))
                .unwrap()
        })
    });
}

fn bench_single_index(c: &mut Criterion) {
    let relay = deep_buffer_relay();
    let cfg = WhittleConfig::default();
    c.bench_function("whittle_index_single_state_k500", |b| {
        b.iter(|| index(black_box(&relay), black_box(250), black_box(&cfg)).unwrap())
    });
}

fn bench_full_table(c: &mut Criterion) {
    let relay = deep_buffer_relay();
    let cfg = WhittleConfig::default();
    c.bench_function("whittle_table_default_grid_k500", |b| {
        b.iter(|| build_table(black_box(&relay), 0, black_box(&cfg)).unwrap())
    });
}

criterion_group!(benches, bench_threshold_solve, bench_single_index, bench_full_table);
criterion_main!(benches);
