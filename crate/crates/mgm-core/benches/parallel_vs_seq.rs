//! Parallel vs sequential throughput on the hot kernels: matrix fill,
//! spectral accumulation, and pointwise evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mgm_core::geometry::{build_hierarchy, Manifold};
use mgm_core::kernels::SpectralKernel;
use mgm_core::par;

fn workload() -> (SpectralKernel, mgm_core::geometry::PointSet) {
    let hier = build_hierarchy(Manifold::FlatTorus, 3, 4).expect("hierarchy");
    let pts = hier.levels[3].clone();
    let h = hier.stats[3].h;
    let kernel = SpectralKernel::for_fill_distance(Manifold::FlatTorus, 3, h).expect("kernel");
    (kernel, pts)
}

fn bench_fill_rows(c: &mut Criterion) {
    let (kernel, pts) = workload();
    let n = pts.len();
    let row_fn = |i: usize, row: &mut [f64]| {
        let x = pts.point(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = kernel.eval(x, pts.point(j));
        }
    };
    let mut g = c.benchmark_group("fill_rows");
    g.sample_size(10);
    g.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
        b.iter(|| {
            let mut buf = vec![0.0; n * n];
            par::fill_rows(&mut buf, n, row_fn);
            buf
        })
    });
    g.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
        b.iter(|| {
            let mut buf = vec![0.0; n * n];
            par::fill_rows_seq(&mut buf, n, row_fn);
            buf
        })
    });
    g.finish();
}

fn bench_accumulate(c: &mut Criterion) {
    let n = 4096usize;
    let len = 8192usize;
    let acc_fn = |i: usize, acc: &mut [f64]| {
        let phase = i as f64 * 1e-3;
        for (k, slot) in acc.iter_mut().enumerate() {
            *slot += (phase * k as f64).sin();
        }
    };
    let mut g = c.benchmark_group("accumulate_vec");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| par::accumulate_vec(n, len, acc_fn)));
    g.bench_function("sequential", |b| {
        b.iter(|| par::accumulate_vec_seq(n, len, acc_fn))
    });
    g.finish();
}

fn bench_map_collect(c: &mut Criterion) {
    let (kernel, pts) = workload();
    let x0 = pts.point(0).to_vec();
    let n = pts.len();
    let eval = |i: usize| kernel.eval(&x0, pts.point(i));
    let mut g = c.benchmark_group("map_collect");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| par::map_collect(n, eval)));
    g.bench_function("sequential", |b| b.iter(|| par::map_collect_seq(n, eval)));
    g.finish();
}

criterion_group!(benches, bench_fill_rows, bench_accumulate, bench_map_collect);
criterion_main!(benches);
