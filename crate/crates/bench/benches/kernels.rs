use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mlpbank_bench::{random_index, random_tensor};
use mlpbank_core::ops::{broadcast_mul, matmul_t, scatter_add, segment_activate, Activation, Segment};

fn bench_matmul_t(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_t");
    for &(rows, k, n) in &[(32usize, 10usize, 5_050usize), (32, 100, 50_500)] {
        let x = random_tensor(vec![n, k], 1);
        let w = random_tensor(vec![rows, k], 2);
        group.bench_function(format!("{n}x{k}_by_{rows}x{k}"), |b| {
            b.iter(|| matmul_t(black_box(&x), black_box(&w)).unwrap())
        });
    }
    group.finish();
}

fn bench_scatter_add(c: &mut Criterion) {
    let mut group = c.benchmark_group("scatter_add");
    for &(rows, cols, ext) in &[(64usize, 5_050usize, 100usize), (64, 50_500, 1_000)] {
        let s = random_tensor(vec![rows, cols], 3);
        let i = random_index(vec![rows, cols], ext, 4);
        group.bench_function(format!("{rows}x{cols}_into_{ext}"), |b| {
            b.iter(|| scatter_add(1, black_box(&s), black_box(&i), ext).unwrap())
        });
    }
    group.finish();
}

fn bench_segment_activate(c: &mut Criterion) {
    let h = random_tensor(vec![32, 50_500], 5);
    let width = 50_500 / 10;
    let segments: Vec<Segment> = Activation::ALL
        .iter()
        .enumerate()
        .map(|(i, &activation)| Segment {
            start: i * width,
            end: (i + 1) * width,
            activation,
        })
        .collect();
    c.bench_function("segment_activate_32x50500_ten_kinds", |b| {
        b.iter(|| segment_activate(black_box(&h), black_box(&segments)).unwrap())
    });
}

fn bench_broadcast_mul(c: &mut Criterion) {
    let hp = random_tensor(vec![32, 1, 5_050], 6);
    let w = random_tensor(vec![1, 2, 5_050], 7);
    c.bench_function("broadcast_mul_32x2x5050", |b| {
        b.iter(|| broadcast_mul(black_box(&hp), black_box(&w)).unwrap())
    });
}

criterion_group!(
    kernels,
    bench_matmul_t,
    bench_scatter_add,
    bench_segment_activate,
    bench_broadcast_mul
);
criterion_main!(kernels);
