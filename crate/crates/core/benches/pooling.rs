use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use msf_core::bench::{bench_scene, BENCH_POINTS_PER_VOXEL, BENCH_VOXEL_SIZE};
use msf_core::par;
use msf_core::pooling::{build_grids, pool_naive, pool_optimized};

const M: usize = 128;
const K: usize = 128;

fn naive_vs_optimized(c: &mut Criterion) {
    let mut group = c.benchmark_group("pooling");
    group.sample_size(10);
    for n in [168_000usize, 674_000] {
        let scene = bench_scene(n, M, 7);
        group.bench_with_input(BenchmarkId::new("naive", n), &scene, |b, s| {
            b.iter(|| pool_naive(&s.window, &s.regions, K, 0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("optimized", n), &scene, |b, s| {
            b.iter(|| {
                let grids =
                    build_grids(&s.window, BENCH_VOXEL_SIZE, BENCH_POINTS_PER_VOXEL).unwrap();
                pool_optimized(&s.window, &grids, &s.regions, K, 0).unwrap()
            })
        });
    }
    group.finish();
}

fn sequential_vs_parallel(c: &mut Criterion) {
    let mut group = c.benchmark_group("workers");
    group.sample_size(10);
    let scene = bench_scene(674_000, M, 7);
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    for workers in [1, all] {
        group.bench_with_input(BenchmarkId::new("optimized", workers), &scene, |b, s| {
            par::with_workers(workers, || {
                b.iter(|| {
                    let grids =
                        build_grids(&s.window, BENCH_VOXEL_SIZE, BENCH_POINTS_PER_VOXEL).unwrap();
                    pool_optimized(&s.window, &grids, &s.regions, K, 0).unwrap()
                })
            })
        });
        if all == 1 {
            break;
        }
    }
    group.finish();
}

criterion_group!(benches, naive_vs_optimized, sequential_vs_parallel);
criterion_main!(benches);
