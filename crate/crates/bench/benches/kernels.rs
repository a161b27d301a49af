use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use vespo_core::kernels::{self, special};

fn kernel_curves(c: &mut Criterion) {
    let grid: Vec<f64> = (0..1000).map(|i| -10.0 + 20.0 * i as f64 / 999.0).collect();
    c.bench_function("phi_vespo_1000", |b| {
        b.iter(|| grid.iter().map(|&lw| kernels::phi_vespo(black_box(lw), 2.0, 3.0).unwrap()).sum::<f64>())
    });
    c.bench_function("surrogate_f_1000", |b| {
        b.iter(|| grid.iter().map(|&lw| kernels::surrogate_f(black_box(lw.exp()), 3.0, 2.0).unwrap()).sum::<f64>())
    });
}

fn incomplete_gamma(c: &mut Criterion) {
    let xs: Vec<f64> = (0..200).map(|i| 0.1 * i as f64).collect();
    let mut group = c.benchmark_group("lower_incomplete_gamma");
    for a in [0.5, 2.0, 5.0] {
        group.bench_function(format!("a={a}"), |b| {
            b.iter(|| xs.iter().map(|&x| special::lower_incomplete_gamma(black_box(a), x).unwrap()).sum::<f64>())
        });
    }
    group.finish();
}

criterion_group!(benches, kernel_curves, incomplete_gamma);
criterion_main!(benches);
